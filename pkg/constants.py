"""
Constants used throughout the PWA certifier.

This module centralizes numerical tolerances, exit codes and file naming so
that every module reads the same values.
"""

# Tolerances
FEASIBILITY_TOL = 1e-7
OPTIMALITY_TOL = 1e-7
PIVOT_TOL = 1e-9
BREAKDOWN_TOL = 1e-11
INTEGRALITY_TOL = 1e-6
GAP_ABS = 1e-6
SET_TOL = 1e-6
VERTEX_TOL = 1e-7
REGION_TOL = 1e-9
DOMAIN_TOL = 1e-7

# Certification defaults
EPSILON_SHRINK = 1e-3
K_LIMIT = 200
ITER_LIMIT = 50
MAX_PATTERNS = 100_000

# CLI exit codes
EXIT_OK = 0
EXIT_INVALID_MODEL = 2
EXIT_INCONCLUSIVE = 3
EXIT_INTERNAL_LIMIT = 4

# Controller branches recorded in trajectories
BRANCH_NN = "nn"
BRANCH_KAPPA = "kappa"

# Output file names
MANIFEST_FILE = "manifest.yaml"
CERTIFICATE_FILE = "certificate.yaml"
REACH_FILE = "reach.yaml"
TRAJECTORY_FILE = "trajectory.csv"
