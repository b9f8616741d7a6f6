"""
Named experiment configurations, looked up by the CLI's --scenario flag.
"""
from typing import Callable, Dict, List

import numpy as np

from errors import UnknownName
from experiments import ExperimentConfig

CURL_GRAD_2D = {"builtin": "curl", "d": 2, "m": 1}
CURL_2D_MATRIX = {"builtin": "curl", "d": 2, "m": 2}
DIV_2D = {"builtin": "div", "d": 2, "m": 1}

SMALL_ENVELOPE = {"grid": [16, 16], "restarts": 2, "max_iters": 50}


# SCENARIO 1: Norm along a gradient laminate
# |.| is convex, every oscillation family has liminf >= F[limit] = 0
def osc_abs():
    return ExperimentConfig(
        kind="lsc", name="osc_abs", op=CURL_GRAD_2D, integrand={"name": "norm"},
        family={"kind": "oscillation", "A0": [0.0, 0.0], "P0": [1.0, 0.0], "xi": [1.0, 0.0],
                "theta": 0.5, "eps": 0.05, "js": [4, 8, 16, 32]},
        grid=[64, 64],
    )


# SCENARIO 2: Area integrand along the same laminate
def osc_area():
    return ExperimentConfig(
        kind="lsc", name="osc_area", op=CURL_GRAD_2D, integrand={"name": "area"},
        family={"kind": "oscillation", "A0": [0.25, -0.5], "P0": [1.0, 0.0], "xi": [1.0, 0.0],
                "theta": 0.5, "eps": 0.05, "js": [4, 8, 16, 32]},
        grid=[64, 64],
    )


# SCENARIO 3: Divergence-free shear oscillation on a diagonal
def osc_anisotropic_div():
    return ExperimentConfig(
        kind="lsc", name="osc_anisotropic_div", op=DIV_2D,
        integrand={"name": "anisotropic", "params": {"a": 1.0, "b": 0.5, "e": [1.0, 1.0]}},
        family={"kind": "oscillation", "A0": [0.0, 0.0], "P0": [1.0, -1.0], "xi": [1.0, 1.0],
                "theta": 0.5, "eps": 0.0, "js": [2, 4, 8, 16]},
        grid=[64, 64],
    )


# SCENARIO 4: Norm along a concentrating slab
# F[mu_j] = |P0| for every j, equal to the hyperplane limit
def conc_norm():
    return ExperimentConfig(
        kind="lsc", name="conc_norm", op=DIV_2D, integrand={"name": "norm"},
        family={"kind": "concentration", "P0": [0.0, 1.0], "xi": [1.0, 0.0], "c_plane": 0.0,
                "js": [4, 8, 16, 32]},
        grid=[64, 64],
    )


# SCENARIO 5: Area integrand along a concentrating slab
# F[mu_j] = 1 - 1/j + sqrt(1 + j^2)/j increases to 2; the slab only varies
# along x1, so the grid is refined along that axis alone
def conc_area():
    return ExperimentConfig(
        kind="lsc", name="conc_area", op=DIV_2D, integrand={"name": "area"},
        family={"kind": "concentration", "P0": [0.0, 1.0], "xi": [1.0, 0.0], "c_plane": 0.0,
                "js": [512, 1024, 2048, 4096]},
        grid=[16384, 2],
    )


# SCENARIO 6: Two-well energy, laminate between the wells
# Not quasiconvex: F[mu_j] = 0 while F[limit] = f(0) |Q| = 1
def twowell_osc():
    return ExperimentConfig(
        kind="lsc", name="twowell_osc", op=CURL_GRAD_2D,
        integrand={"name": "twowell", "params": {"P0": [1.0, 0.0]}},
        family={"kind": "oscillation", "A0": [0.0, 0.0], "P0": [2.0, 0.0], "xi": [1.0, 0.0],
                "theta": 0.5, "eps": 0.0, "js": [4, 8, 16, 32]},
        grid=[64, 64], expect="fail",
    )


# SCENARIO 7: Recovery sequence for the two-well energy at u = 0
def relax_twowell():
    return ExperimentConfig(
        kind="relax", name="relax_twowell", op=CURL_GRAD_2D,
        integrand={"name": "twowell", "params": {"P0": [1.0, 0.0]}},
        family={"kind": "recovery", "mesh": [4], "js": [8]},
        grid=[128, 128], target={"kind": "constant", "value": [0.0, 0.0]},
        envelope={"grid": [32, 32], "restarts": 8, "max_iters": 200},
    )


# SCENARIO 8: Two-well energy already at a well
def relax_at_well():
    return ExperimentConfig(
        kind="relax", name="relax_at_well", op=CURL_GRAD_2D,
        integrand={"name": "twowell", "params": {"P0": [1.0, 0.0]}},
        family={"kind": "recovery", "mesh": [4], "js": [8]},
        grid=[64, 64], target={"kind": "constant", "value": [1.0, 0.0]},
        envelope=dict(SMALL_ENVELOPE),
    )


# SCENARIO 9: Convex integrand, correctors stay trivial
def relax_area():
    return ExperimentConfig(
        kind="relax", name="relax_area", op=CURL_GRAD_2D, integrand={"name": "area"},
        family={"kind": "recovery", "mesh": [2, 4], "js": [4, 8]},
        grid=[64, 64], target={"kind": "constant", "value": [0.3, -0.2]},
        envelope=dict(SMALL_ENVELOPE),
    )


# SCENARIO 10: Regular Jensen inequality for a symmetric two-atom measure
def jensen_regular():
    return ExperimentConfig(
        kind="jensen", name="jensen_regular", op=CURL_GRAD_2D, integrand={"name": "norm"},
        jensen={"location": "regular",
                "points": [{"atoms": [[0.5, [-1.0, 0.0]], [0.5, [1.0, 0.0]]]},
                           {"atoms": [[0.25, [0.5, 0.0]], [0.75, [-0.5, 0.0]]],
                            "recession_atoms": [[1.0, [1.0, 0.0]]], "lambda_density": 2.0}],
                "laminate": {"A0": [0.0, 0.0], "P0": [1.0, 0.0],
                             "integrand": {"name": "twowell", "params": {"P0": [1.0, 0.0]}}}},
    )


# SCENARIO 11: Singular Jensen inequality on the rank-one cone
# two rank-one unit matrices averaging to a rank-one matrix, g = (Q f)^# of a two-well energy
def jensen_singular():
    r = 1.0 / np.sqrt(2.0)
    return ExperimentConfig(
        kind="jensen", name="jensen_singular", op=CURL_2D_MATRIX,
        integrand={"name": "twowell", "params": {"P0": [1.0, 0.0, 0.0, 0.0]}},
        jensen={"location": "singular", "g": "envelope_recession", "t_grid": [16.0, 32.0],
                "points": [{"recession_atoms": [[0.5, [r, r, 0.0, 0.0]], [0.5, [r, -r, 0.0, 0.0]]]},
                           {"recession_atoms": [[0.5, [1.0, 0.0, 0.0, 0.0]], [0.5, [-1.0, 0.0, 0.0, 0.0]]]}]},
        envelope=dict(SMALL_ENVELOPE),
    )


SCENARIOS: Dict[str, Callable[[], ExperimentConfig]] = {
    "osc_abs": osc_abs,
    "osc_area": osc_area,
    "osc_anisotropic_div": osc_anisotropic_div,
    "conc_norm": conc_norm,
    "conc_area": conc_area,
    "twowell_osc": twowell_osc,
    "relax_twowell": relax_twowell,
    "relax_at_well": relax_at_well,
    "relax_area": relax_area,
    "jensen_regular": jensen_regular,
    "jensen_singular": jensen_singular,
}

LSC_MATRIX = ["osc_abs", "osc_area", "osc_anisotropic_div", "conc_norm", "conc_area"]


def scenario_names() -> List[str]:
    return list(SCENARIOS)


def get_scenario(name: str) -> ExperimentConfig:
    factory = SCENARIOS.get(name)
    if factory is None:
        raise UnknownName(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    return factory()
