"""Point vortex dynamics in background flows on the plane, round spheres and flat tori."""

__version__ = "0.1.0"

from .geometry import FlatTorus, Plane, Sphere, Surface  # noqa: E402
from .greens import green_kernel, verify_poisson  # noqa: E402
from .dynamics import (GrowthRate, LinearShear, PointVortexSystem, RigidRotation, Strain,  # noqa: E402
                       UniformFlow, VortexState, ZeroBackground)
from .integrate import IntegratorConfig, Trajectory, integrate, sweep  # noqa: E402

__all__ = [
    "Plane", "Sphere", "FlatTorus", "Surface", "green_kernel", "verify_poisson", "GrowthRate",
    "LinearShear", "RigidRotation", "Strain", "UniformFlow", "ZeroBackground", "PointVortexSystem",
    "VortexState", "IntegratorConfig", "Trajectory", "integrate", "sweep",
]
