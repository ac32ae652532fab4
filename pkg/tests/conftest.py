import numpy as np
import pytest

from bergmanlab import dyadic
from bergmanlab.geometry import make_geometry


@pytest.fixture(scope="session")
def disc():
    return make_geometry("disc")


@pytest.fixture(scope="session")
def ball2():
    return make_geometry("ball2")


@pytest.fixture(scope="session")
def disc_family(disc):
    return dyadic.build_disc_family(disc, n_base=16, max_level=8)


@pytest.fixture(scope="session")
def ball_sample(ball2):
    # coarser than production so the unit tests stay quick
    return dyadic.make_ball2_sample(ball2, n_lat=12, n_ang1=24, n_ang2=24)


@pytest.fixture(scope="session")
def ball_system(ball2, ball_sample):
    return dyadic.Ball2DyadicSystem(ball2, ball_sample, delta=0.45,
                                    max_level=3, order_seed=5)


@pytest.fixture(scope="session")
def ball_family(ball2, ball_sample):
    return dyadic.build_ball2_family(ball2, ball_sample, delta=0.45,
                                     max_level=3, n_systems=3, seed=11)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20260823)


@pytest.fixture(scope="session")
def disc_agrid(disc, disc_family):
    from bergmanlab import projection
    return projection.build_averaging_grid(disc, disc_family)


@pytest.fixture(scope="session")
def disc_pgrid(disc):
    from bergmanlab import projection
    return projection.build_grid(disc, radial=64, angular=128)


@pytest.fixture(scope="session")
def disc_proj(disc, disc_pgrid):
    from bergmanlab import projection
    return projection.assemble_projection(disc, disc_pgrid, truncation=96)


@pytest.fixture(scope="session")
def ball_agrid(ball2, ball_family):
    from bergmanlab import projection
    return projection.build_averaging_grid(ball2, ball_family)
