"""Named experiment presets.

These coefficient sets and parameters are artifact-chosen test problems
(nothing in the underlying theory pins model instances); they are sized so
the convergence trends are visible above Monte Carlo noise at desk scale.
Declared constants are valid on the default sampling box |u|,|v|,|xi|,|eta|
<= 3, since several coefficients (linear ones in particular) admit no
global bound.
"""

from __future__ import annotations

# Reduced model: slow field + particle pair on one Brownian channel.  The
# slow-field coupling 12*tanh(xi) and particle coupling 2*eta are sized so
# that P{sup_t ||u - u_bar||^2 > 0.05} sweeps from ~0.4 to ~0 across the
# default epsilon ladder; weaker couplings leave the probability at zero on
# every rung because heat dissipation caps the field gap.
MODEL1_DEFAULT = {
    "model": 1,
    "coefficients": {
        "f": "tanh(u) + 12*tanh(xi)",
        "b": "sin(xi) + 2*eta",
        "B": "-eta",
        "sigma3": "1",
        "sigma4": "1",
    },
    "constants": {
        "K_f": 145.0,
        "C_f": 13.0,
        "K_b": 5.0,
        "C_b": 7.0,
        "beta": 3.5,
        "K_sigma3": 0.0,
        "C_sigma3": 1.0,
        "K_B": 1.0,
        "C_B": 3.0,
        "K_sigma4": 0.0,
        "C_sigma4": 1.0,
    },
    "n_modes": 32,
    "grid_points": 128,
    "T": 1.0,
    "h": 0.01,
    "rho": 0.1,
    "eps_ladder": [0.5, 0.1, 0.02],
    "replicas": 200,
    "master_seed": 20240801,
    "delta_tol": 0.05,
    "u0": "x*(1-x)",
    "x0": 0.0,
    "y0": 0.0,
    "bbar_mode": "closed_form",
    "bbar_expr": "sin(xi)",
}

# Four-equation model, coefficients affine in the fast field so the averaged
# drift has the stationary-mean closed form.  The fast drift has no constant
# source: the chain's fixed point is then tiny and the reduced/full gap is
# dominated by the genuine averaging error rather than step bias.
MODEL2_LINEAR = {
    "model": 2,
    "coefficients": {
        "f": "v + 0.2*tanh(xi)",
        "g": "-v + 0.5*u",
        "b": "sin(xi) + eta",
        "B": "-eta",
        "sigma1": "0",
        "sigma2": "0.5",
        "sigma3": "1",
        "sigma4": "1",
    },
    "constants": {
        "K_f": 1.04,
        "C_f": 3.2,
        "K_sigma1": 0.0,
        "K_g": 1.25,
        "alpha": 1.0,
        "K_sigma2": 0.0,
        "C_sigma2": 0.5,
        "K_b": 2.0,
        "C_b": 4.0,
        "beta": 2.0,
        "K_sigma3": 0.0,
        "C_sigma3": 1.0,
        "K_B": 1.0,
        "C_B": 3.0,
        "K_sigma4": 0.0,
        "C_sigma4": 1.0,
    },
    "n_modes": 32,
    "grid_points": 128,
    "T": 1.0,
    "h": 0.002,
    "rho": 0.1,
    "eps_ladder": [0.1, 0.02],
    "replicas": 100,
    "master_seed": 20240802,
    "delta_tol": 0.05,
    "u0": "2*x*(1-x)",
    "v0": "0",
    "x0": 0.0,
    "y0": 0.0,
    "bbar_mode": "closed_form",
    "bbar_expr": "sin(xi)",
    "fbar_mode": "closed_form",
    "delta_policy": "schedule",
}

# Variant for the temporal-regularity study: additive noise on the slow
# field, recording step 2^-8 so the lag ladder sits on the grid.
MODEL2_HOLDER = dict(
    MODEL2_LINEAR,
    coefficients=dict(MODEL2_LINEAR["coefficients"], sigma1="1"),
    constants=dict(MODEL2_LINEAR["constants"], K_sigma1=1.0),
    h=2.0**-8,
    T=0.3125,
    eps_ladder=[0.1],
    replicas=200,
    master_seed=20240803,
)

PRESETS = {
    "model1_default": MODEL1_DEFAULT,
    "model2_linear": MODEL2_LINEAR,
    "model2_holder": MODEL2_HOLDER,
}
