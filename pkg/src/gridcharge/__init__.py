"""Joint PEV charging coordination and grid generation dispatch.

Semidefinite relaxation of AC power flow in Gram-matrix variables, a
two-stage penalty method recovering binary charging decisions and
rank-one voltage matrices, and a rolling-horizon controller with a
static full-information counterpart and a brute-force oracle.
"""

__version__ = "0.1.0"
