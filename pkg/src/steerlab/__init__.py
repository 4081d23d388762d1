"""steerlab: desk-scale comparison of implicit (energy-based) and explicit
behavioral-cloning heads for steering control, evaluated closed-loop in a
procedural road world.
"""

__version__ = "0.1.0"
