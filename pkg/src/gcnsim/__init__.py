"""gcnsim: a deterministic, time-slotted Green Cloudlet Network simulator."""

__version__ = "0.1.0"
