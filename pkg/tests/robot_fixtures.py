"""Parametric URDF builders shared by the test suite.

Everything here produces plain URDF strings (plus sphere sidecar dicts) so
tests can assemble arms, hands, and arm-hand systems without shipping large
hand-written XML files.
"""
import json

import numpy as np


def _fmt(v):
    return " ".join(repr(float(x)) for x in v)


def _joint(name, jtype, parent, child, xyz, rpy, axis, lower=None, upper=None,
           velocity=2.5, mimic=None):
    lines = [f'  <joint name="{name}" type="{jtype}">']
    lines.append(f'    <origin xyz="{_fmt(xyz)}" rpy="{_fmt(rpy)}"/>')
    lines.append(f'    <parent link="{parent}"/>')
    lines.append(f'    <child link="{child}"/>')
    if jtype != "fixed":
        lines.append(f'    <axis xyz="{_fmt(axis)}"/>')
        if jtype != "continuous":
            lines.append(f'    <limit lower="{lower}" upper="{upper}" velocity="{velocity}"/>')
        else:
            lines.append(f'    <limit velocity="{velocity}"/>')
    if mimic is not None:
        mj, mult, off = mimic
        lines.append(f'    <mimic joint="{mj}" multiplier="{mult}" offset="{off}"/>')
    lines.append("  </joint>")
    return "\n".join(lines)


def serial_arm_urdf(n_joints=6, name="arm", link_length=0.25, lower=-2.8, upper=2.8,
                    velocity=2.5, prefix=""):
    """Serial arm with alternating z / y axes, links stacked along +z."""
    parts = [f'<robot name="{name}">', f'  <link name="{prefix}base"/>']
    parent = f"{prefix}base"
    for i in range(n_joints):
        child = f"{prefix}link{i + 1}"
        parts.append(f'  <link name="{child}"/>')
        axis = (0, 0, 1) if i % 2 == 0 else (0, 1, 0)
        parts.append(_joint(f"{prefix}joint{i + 1}", "revolute", parent, child,
                            (0, 0, link_length if i > 0 else 0.1), (0, 0, 0), axis,
                            lower, upper, velocity))
        parent = child
    parts.append(f'  <link name="{prefix}tool"/>')
    parts.append(_joint(f"{prefix}tool_joint", "fixed", parent, f"{prefix}tool",
                        (0, 0, link_length), (0, 0, 0), (0, 0, 1)))
    parts.append("</robot>")
    return "\n".join(parts)


def arm_sphere_sidecar(n_joints=6, link_length=0.25, radius=0.055, per_link=2, prefix=""):
    """Spheres along each moving link of serial_arm_urdf."""
    spheres = {}
    for i in range(1, n_joints + 1):
        entries = []
        for k in range(per_link):
            z = link_length * (k + 1) / (per_link + 1)
            entries.append({"center": [0.0, 0.0, round(z, 6)], "radius": radius})
        spheres[f"{prefix}link{i}"] = entries
    return spheres


def planar_finger_urdf(l1=0.06, l2=0.05, lower=-1.5, upper=1.5):
    """2-DoF planar toy finger (both joints about z, links along x)."""
    return f"""<robot name="planar_finger">
  <link name="palm"/>
  <link name="proximal"/>
  <link name="distal"/>
  <link name="tip"/>
  <joint name="mcp" type="revolute">
    <origin xyz="0 0 0" rpy="0 0 0"/>
    <parent link="palm"/>
    <child link="proximal"/>
    <axis xyz="0 0 1"/>
    <limit lower="{lower}" upper="{upper}" velocity="6.0"/>
  </joint>
  <joint name="pip" type="revolute">
    <origin xyz="{l1} 0 0" rpy="0 0 0"/>
    <parent link="proximal"/>
    <child link="distal"/>
    <axis xyz="0 0 1"/>
    <limit lower="{lower}" upper="{upper}" velocity="6.0"/>
  </joint>
  <joint name="tip_joint" type="fixed">
    <origin xyz="{l2} 0 0" rpy="0 0 0"/>
    <parent link="distal"/>
    <child link="tip"/>
  </joint>
</robot>"""


def five_finger_hand_urdf(joints_per_finger=4, name="hand20", prefix="h_"):
    """Anthropomorphic-ish hand: 5 fingers x joints_per_finger revolute DoF."""
    fingers = ["thumb", "index", "middle", "ring", "pinky"]
    bases = [(0.02, 0.04, 0.0), (0.09, 0.025, 0.0), (0.095, 0.0, 0.0),
             (0.09, -0.025, 0.0), (0.085, -0.05, 0.0)]
    seg = [0.045, 0.035, 0.028, 0.024]
    parts = [f'<robot name="{name}">', f'  <link name="{prefix}palm"/>']
    for fi, finger in enumerate(fingers):
        parent = f"{prefix}palm"
        for k in range(joints_per_finger):
            child = f"{prefix}{finger}_l{k}"
            parts.append(f'  <link name="{child}"/>')
            xyz = bases[fi] if k == 0 else (seg[min(k - 1, len(seg) - 1)], 0, 0)
            # First joint abducts about x, the rest curl about z.
            axis = (1, 0, 0) if k == 0 else (0, 0, 1)
            lo, hi = (-0.45, 0.45) if k == 0 else (-0.3, 1.7)
            parts.append(_joint(f"{prefix}{finger}_j{k}", "revolute", parent, child,
                                xyz, (0, 0, 0), axis, lo, hi, 7.0))
            parent = child
        tip = f"{prefix}{finger}_tip"
        parts.append(f'  <link name="{tip}"/>')
        parts.append(_joint(f"{prefix}{finger}_tipj", "fixed", parent, tip,
                            (seg[-1], 0, 0), (0, 0, 0), (0, 0, 1)))
    parts.append("</robot>")
    return "\n".join(parts)


def mimic_hand_urdf():
    """3-finger hand, 12 joints of which 3 distal ones mimic: 9 actuated DoF."""
    parts = ['<robot name="hand_mimic">', '  <link name="m_palm"/>']
    offsets = [(0.07, 0.03, 0.0), (0.075, 0.0, 0.0), (0.07, -0.03, 0.0)]
    for fi in range(3):
        parent = "m_palm"
        for k in range(4):
            child = f"m_f{fi}_l{k}"
            parts.append(f'  <link name="{child}"/>')
            xyz = offsets[fi] if k == 0 else (0.04, 0, 0)
            axis = (1, 0, 0) if k == 0 else (0, 0, 1)
            lo, hi = (-0.4, 0.4) if k == 0 else (-0.2, 1.6)
            mimic = (f"m_f{fi}_j2", 0.8, 0.0) if k == 3 else None
            parts.append(_joint(f"m_f{fi}_j{k}", "revolute", parent, child,
                                xyz, (0, 0, 0), axis, lo, hi, 7.0, mimic=mimic))
            parent = child
        parts.append(f'  <link name="m_f{fi}_tip"/>')
        parts.append(_joint(f"m_f{fi}_tipj", "fixed", parent, f"m_f{fi}_tip",
                            (0.035, 0, 0), (0, 0, 0), (0, 0, 1)))
    parts.append("</robot>")
    return "\n".join(parts)


def arm_hand_urdf(n_arm_joints=6, name="armhand", hand_prefix="h_"):
    """Serial arm with the five-finger hand mounted on the tool flange."""
    arm = serial_arm_urdf(n_arm_joints, name=name)
    hand = five_finger_hand_urdf(4, prefix=hand_prefix)
    hand_body = hand.split("\n", 1)[1].rsplit("</robot>", 1)[0]
    mount = _joint("hand_mount", "fixed", "tool", f"{hand_prefix}palm",
                   (0, 0, 0.02), (0, 0, 0), (0, 0, 1))
    return arm.rsplit("</robot>", 1)[0] + hand_body + "\n" + mount + "\n</robot>"


def arm_joint_names(n=6, prefix=""):
    return [f"{prefix}joint{i + 1}" for i in range(n)]


def five_finger_joint_names(prefix="h_"):
    return [f"{prefix}{f}_j{k}" for f in ["thumb", "index", "middle", "ring", "pinky"]
            for k in range(4)]


def five_finger_retarget_pairs(prefix="h_"):
    """Wrist->tip pairs for all five fingers plus thumb->index/middle tip pairs."""
    tips = {f: f"{prefix}{f}_tip" for f in ["thumb", "index", "middle", "ring", "pinky"]}
    palm = f"{prefix}palm"
    pairs = [
        {"human": ["wrist", "thumb_tip"], "robot": [palm, tips["thumb"]]},
        {"human": ["wrist", "index_tip"], "robot": [palm, tips["index"]]},
        {"human": ["wrist", "middle_tip"], "robot": [palm, tips["middle"]]},
        {"human": ["wrist", "ring_tip"], "robot": [palm, tips["ring"]]},
        {"human": ["wrist", "pinky_tip"], "robot": [palm, tips["pinky"]]},
        {"human": ["thumb_tip", "index_tip"], "robot": [tips["thumb"], tips["index"]]},
        {"human": ["thumb_tip", "middle_tip"], "robot": [tips["thumb"], tips["middle"]]},
    ]
    return pairs


def neutral_hand_keypoints():
    """Canonical 21-landmark hand (meters, wrist at origin, fingers along +x).

    Index layout follows the MediaPipe convention: 0 wrist; 1-4 thumb;
    5-8 index; 9-12 middle; 13-16 ring; 17-20 pinky (each MCP..tip).
    """
    kp = np.zeros((21, 3))
    finger_y = {"thumb": 0.045, "index": 0.025, "middle": 0.0, "ring": -0.025,
                "pinky": -0.05}
    base_x = {"thumb": 0.025, "index": 0.09, "middle": 0.095, "ring": 0.09,
              "pinky": 0.085}
    seg = {"thumb": [0.04, 0.033, 0.028], "index": [0.04, 0.025, 0.022],
           "middle": [0.045, 0.028, 0.024], "ring": [0.04, 0.026, 0.022],
           "pinky": [0.032, 0.02, 0.018]}
    start = {"thumb": 1, "index": 5, "middle": 9, "ring": 13, "pinky": 17}
    for finger, s in start.items():
        x = base_x[finger]
        y = finger_y[finger]
        kp[s] = (x, y, 0.0)
        for k, length in enumerate(seg[finger]):
            x += length
            kp[s + 1 + k] = (x, y, 0.002 * (k + 1))
    return kp


def sidecar_json(spheres: dict) -> str:
    return json.dumps(spheres, indent=1)
