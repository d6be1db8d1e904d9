# ---
# jupytext:
#   text_representation:
#     format_name: percent
# ---

# %% [markdown]
# # Early exercise three ways
#
# A driftless geometric diffusion with volatility 0.2 and a put payoff
# (strike 1) acting as both terminal cost and obstacle.  The same stopping
# value is computed by a binomial tree, by reflected least-squares Monte
# Carlo and by the projected finite-difference sweep.

# %%
import numpy as np

from hierisk.hjbgrid import make_grids, solve_follower_hjb, solve_leader_obstacle
from hierisk.presets import american_put
from hierisk.problem import SpaceGrid, TimeGrid
from hierisk.rbsde import optimal_stopping_oracle, reflection_diagnostics, solve_penalized, solve_reflected
from hierisk.sde import simulate_paths

spec = american_put()

# %% [markdown]
# ## Tree reference

# %%
tree = {n: optimal_stopping_oracle(spec, n) for n in (128, 256, 512, 1024)}
for n, v in tree.items():
    print(f"tree steps {n:5d}: {v:.6f}")

# %% [markdown]
# ## Regression Monte Carlo
#
# The reflected solve projects onto the obstacle every step; the penalized
# one adds `n (y - h)^-` to the driver.  With `dt * n = 1` the two coincide.

# %%
ens = simulate_paths(spec, TimeGrid(64, 1.0), (0, 0), 50_000, seed=7)
xi = spec.leader_terminal_at(ens.X[:, -1, :])
ref = solve_reflected(spec, ens, xi)
print(f"reflected   Y0 = {ref.y0:.6f} (se {ref.std_error:.2e})")
for n in (4.0, 16.0, 64.0):
    print(f"penalized n={n:4.0f}: {solve_penalized(spec, ens, xi, n_penalty=n).y0:.6f}")

diag = reflection_diagnostics(ref, spec, ens)
print(diag.summary())

# %% [markdown]
# ## Projected grid sweep

# %%
grids = make_grids(spec, SpaceGrid(0.0, 2.0, 201))
_, _, table = solve_follower_hjb(spec, grids)
leader, policy, pushed = solve_leader_obstacle(spec, grids, table)
print(f"grid value at x=1: {leader.at(0, 1.0):.6f} with {grids.time.n_steps} steps")

# %% [markdown]
# The exercise boundary at t = 0 is the largest node where the value equals
# the payoff.

# %%
x = grids.space.nodes
contact = np.isclose(leader.values[0], np.maximum(1.0 - x, 0.0)) & (x < 1.0)
print(f"exercise boundary near x = {x[contact].max():.3f}")
