from __future__ import annotations

import pytest

from hierisk.problem import spec_from_dict


def make_spec(**overrides):
    """One-dimensional problem with Brownian state and trivial costs unless overridden."""
    doc = {
        "horizon": 1.0,
        "x0": 0.0,
        "drift": "0",
        "diffusion": "1",
        "control_grid_u": [0.0],
        "control_grid_v": [0.0],
        "ellipticity_floor": 0.5,
    }
    doc.update(overrides)
    return spec_from_dict(doc)


@pytest.fixture
def spec_factory():
    return make_spec
