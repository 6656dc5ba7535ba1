"""Exception hierarchy shared by all dexteleop modules."""


class TeleopError(Exception):
    """Base class for all dexteleop errors."""


# --- robot description / kinematics ---

class ParseError(TeleopError):
    """Malformed robot description (bad XML, missing required attributes)."""


class KinematicError(TeleopError):
    """Structurally invalid kinematic tree (cycle, multiple roots, bad axis)."""


class UnknownLink(TeleopError):
    pass


class DimensionMismatch(TeleopError):
    pass


# --- wrist pose estimation ---

class InvalidDepth(TeleopError):
    pass


class InsufficientCorrespondences(TeleopError):
    pass


class DegenerateConfiguration(TeleopError):
    """Correspondence points are (near-)collinear; alignment is ill-posed."""


class DegenerateHand(TeleopError):
    """Palm landmarks are collinear; no orientation basis can be built."""


class MissingScale(TeleopError):
    pass


class InvalidScale(TeleopError):
    pass


# --- fusion ---

class UnknownCamera(TeleopError):
    pass


class CalibrationRankDeficient(TeleopError):
    """Calibration buffer lacks rotational diversity."""


class NotCalibrated(TeleopError):
    pass


class NoValidCamera(TeleopError):
    pass


class StaleMotion(TeleopError):
    pass


# --- retargeting ---

class SolverDiverged(TeleopError):
    """Non-finite objective encountered; input vectors are unusable."""


# --- motion generation ---

class NoCollisionModel(TeleopError):
    pass


class StaleTarget(TeleopError):
    pass


# --- server / sessions ---

class DuplicateRobot(TeleopError):
    pass


class BadRobotDescription(TeleopError):
    pass


class UnknownSession(TeleopError):
    pass


class MalformedFrame(TeleopError):
    pass


# --- simulation client ---

class UnknownRobot(TeleopError):
    pass


class LimitViolation(TeleopError):
    """A command outside joint limits reached the scene; upstream bug."""


class EmptyScript(TeleopError):
    pass


class CorruptRecording(TeleopError):
    pass
