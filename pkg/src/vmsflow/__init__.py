"""Structure-preserving VMS-stabilized incompressible Navier-Stokes solver.

Vorticity-velocity-pressure formulation on tensor-product B-spline
discretizations of the 2D de Rham complex, with elementwise fine-scale
bubble problems eliminated by static condensation.
"""

__version__ = "0.1.0"
