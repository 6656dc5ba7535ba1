"""dexteleop: vision-based dexterous arm-hand teleoperation toolkit."""

__version__ = "0.1.0"
