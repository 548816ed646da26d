"""
Pytest configuration and fixtures for pwa-certifier tests.

This module provides shared fixtures and configuration for all tests.
"""

import glob
import logging
import os
import shutil
import tempfile

import numpy as np
import pytest

from encoder import derive_big_m
from geometry import Ellipsoid, Polytope
from model_io import load_model
from models import DualModeController, FeedbackPiece, MaxoutLayer, MaxoutNet, PwaSystem, Region

MODELS_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "models")


@pytest.fixture
def models_dir():
    """Path to the bundled example models."""
    return MODELS_DIR


@pytest.fixture
def contraction_path():
    """Scalar contraction x+ = 0.5 x under the zero network."""
    return os.path.join(MODELS_DIR, "contraction.yaml")


@pytest.fixture
def divergent_path():
    """Scalar expansion x+ = 2 x under the zero network."""
    return os.path.join(MODELS_DIR, "divergent.yaml")


@pytest.fixture
def saturating_path():
    """x+ = -0.5 x + clamp(-0.5 x, -0.25, 0.25), with a dual-mode section."""
    return os.path.join(MODELS_DIR, "saturating.yaml")


@pytest.fixture
def case_study_path():
    """Four-quadrant PWA plant with the zero network."""
    return os.path.join(MODELS_DIR, "case_study.yaml")


@pytest.fixture
def case_study_saturated_path():
    """Four-quadrant PWA plant with u = clamp(-0.1 x2, -1, 1)."""
    return os.path.join(MODELS_DIR, "case_study_saturated.yaml")


@pytest.fixture
def contraction_bundle(contraction_path):
    return load_model(contraction_path)


@pytest.fixture
def saturating_bundle(saturating_path):
    return load_model(saturating_path)


@pytest.fixture
def case_study_bundle(case_study_path):
    return load_model(case_study_path)


@pytest.fixture
def case_study_saturated_bundle(case_study_saturated_path):
    return load_model(case_study_saturated_path)


@pytest.fixture
def contraction_system():
    """x+ = 0.5 x on X = U = [-1, 1], built in memory."""
    cell = Polytope.from_box([-1.0, -1.0], [1.0, 1.0])
    region = Region(A=[[0.5]], B=[[0.0]], p=[0.0], cell=cell)
    return PwaSystem(
        regions=(region,), X=Polytope.from_box([-1.0], [1.0]), U=Polytope.from_box([-1.0], [1.0])
    )


@pytest.fixture
def zero_net():
    """Phi == 0 for n = m = 1."""
    return MaxoutNet.zero(1, 1)


@pytest.fixture
def abs_net():
    """|x| as a single maxout neuron with channels x and -x."""
    layer = MaxoutLayer(W=[[1.0], [-1.0]], b=[0.0, 0.0], channels=2)
    return MaxoutNet(layers=(layer,), W_out=[[1.0]], b_out=[0.0])


@pytest.fixture
def contraction_cfg(contraction_system, zero_net):
    return derive_big_m(contraction_system, zero_net)


@pytest.fixture
def local_controller(zero_net):
    """Dual-mode controller with kappa(x) = 0.25 x on [-1, 1] and E = {x^2 <= 1}."""
    piece = FeedbackPiece(K=[[0.25]], k=[0.0], cell=Polytope.from_box([-1.0], [1.0]))
    return DualModeController(net=zero_net, kappa=(piece,), ellipsoid=Ellipsoid(S=[[1.0]], level=1.0))


@pytest.fixture
def random_instance():
    """
    Factory for small random closed loops.

    Returns ``(system, net)``: a PWA plant whose regions split X x U along
    the first state coordinate, and an unsaturated maxout network with
    ``Phi(0) = 0``. Matrices are scaled down so that one step stays near X.
    """

    def _make(seed: int, n: int = 2, m: int = 1, regions: int = 2, widths=(2,), channels: int = 2):
        rng = np.random.default_rng(seed)
        x_box = Polytope.from_box(-np.ones(n), np.ones(n))
        u_box = Polytope.from_box(-np.ones(m), np.ones(m))
        cuts = np.linspace(-1.0, 1.0, regions + 1)
        cells = []
        for i in range(regions):
            lo = np.concatenate([[cuts[i]], -np.ones(n - 1), -np.full(m, 10.0)])
            hi = np.concatenate([[cuts[i + 1]], np.ones(n - 1), np.full(m, 10.0)])
            cells.append(Polytope.from_box(lo, hi))
        system = PwaSystem(
            regions=tuple(
                Region(
                    A=0.4 * rng.uniform(-1.0, 1.0, (n, n)),
                    B=0.3 * rng.uniform(-1.0, 1.0, (n, m)),
                    p=np.zeros(n),
                    cell=cell,
                )
                for cell in cells
            ),
            X=x_box,
            U=u_box,
        )

        layers = []
        width_in = n
        for width in widths:
            W = rng.uniform(-1.0, 1.0, (width * channels, width_in))
            layers.append(MaxoutLayer(W=W, b=np.zeros(width * channels), channels=channels))
            width_in = width
        net = MaxoutNet(layers=tuple(layers), W_out=0.3 * rng.uniform(-1.0, 1.0, (m, width_in)), b_out=np.zeros(m))
        return system, net

    return _make


@pytest.fixture
def temp_csv_file():
    """Create a temporary CSV file for testing write operations."""
    with tempfile.NamedTemporaryFile(mode="w", suffix=".csv", delete=False) as f:
        f.write("k,x1,u1\n")
        f.write("0,1.0,0.5\n")
        temp_path = f.name

    yield temp_path

    # Cleanup
    if os.path.exists(temp_path):
        os.remove(temp_path)
    # Also clean up any backup files
    for backup_file in glob.glob(temp_path.replace(".csv", ".csv.backup_*")):
        if os.path.exists(backup_file):
            os.remove(backup_file)


@pytest.fixture
def temp_dir():
    """Create a temporary directory for testing."""
    temp_path = tempfile.mkdtemp()
    yield temp_path

    # Cleanup
    if os.path.exists(temp_path):
        shutil.rmtree(temp_path)


@pytest.fixture
def mock_logger():
    """Create a mock logger for testing."""
    logger = logging.getLogger("test_logger")
    logger.setLevel(logging.INFO)
    return logger
