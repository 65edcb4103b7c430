"""Operating thresholds, telemetry calibration and kinematic checks for
leader/follower truck-mounted attenuator pairs."""

__version__ = "0.1.0"
