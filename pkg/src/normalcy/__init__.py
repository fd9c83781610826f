"""Learning normality from motion data and flagging novel situations online."""

__version__ = "0.1.0"

FORMAT_VERSION = 1
