"""Sensor-space learning control for a simulated pneumatic soft manipulator."""

__version__ = "0.1.0"

# Large numpy temporaries churn through mmap'd pages by default; raising the
# malloc mmap threshold keeps them on the reusable heap (big win for the
# training loops). Harmless where unavailable.
try:
    import ctypes as _ctypes

    _ctypes.CDLL("libc.so.6").mallopt(-3, 64 * 1024 * 1024)  # M_MMAP_THRESHOLD
except Exception:  # pragma: no cover - non-glibc platforms
    pass

from .arm import (
    ArmParams,
    ArmState,
    Pose6D,
    SectionArc,
    PipeScene,
    Cylinder,
    section_arc,
    forward_kinematics,
    spring_lengths,
    equilibrium_length,
    step,
    collision_check,
    calibrate_offset_radius,
    rest_state,
)
from .sensor import (
    SensorParams,
    inductance_from_frequency,
    frequency_to_length,
    length_to_frequency,
    f_map,
    f_map_inverse,
)

__all__ = [
    "ArmParams", "ArmState", "Pose6D", "SectionArc", "PipeScene", "Cylinder",
    "section_arc", "forward_kinematics", "spring_lengths", "equilibrium_length",
    "step", "collision_check", "calibrate_offset_radius", "rest_state",
    "SensorParams", "inductance_from_frequency", "frequency_to_length",
    "length_to_frequency", "f_map", "f_map_inverse",
]
