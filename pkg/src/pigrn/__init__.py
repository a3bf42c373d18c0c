"""Physics-informed GRU for joint kinematics, load, and torque estimation
from surface EMG, built around a two-link sagittal-plane arm model.
"""

__version__ = "0.1.0"
