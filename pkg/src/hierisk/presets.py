"""Ready-made problems used by the tests, the acceptance suite and the demos."""

from __future__ import annotations

from .problem import GeneratorFlags, ProblemSpec

_FIVE = ((-1.0,), (-0.5,), (0.0,), (0.5,), (1.0,))


def american_put(strike: float = 1.0, vol: float = 0.2) -> ProblemSpec:
    """Driftless geometric diffusion with a put payoff as both terminal and obstacle."""
    payoff = f"pos({strike!r}-x)"
    return ProblemSpec(
        horizon=1.0,
        x0=(1.0,),
        drift=("0",),
        diffusion=((f"{vol!r}*x",),),
        control_grid_u=((0.0,),),
        control_grid_v=((0.0,),),
        leader_terminal=payoff,
        follower_terminal=payoff,
        obstacle=payoff,
        ellipticity_floor=0.005,
        validation_box=(0.5, 2.0),
        generator_flags=GeneratorFlags(True, True, True),
    )


def linear_quadratic(generator: str = "0") -> ProblemSpec:
    """Leader and follower both steer the drift; quadratic costs in control and state."""
    return ProblemSpec(
        horizon=1.0,
        x0=(0.0,),
        drift=("u+v",),
        diffusion=(("1",),),
        control_grid_u=_FIVE,
        control_grid_v=_FIVE,
        leader_running_cost="u^2+x^2",
        follower_running_cost="v^2+x^2",
        generator=generator,
        ellipticity_floor=0.5,
    )


def abs_z_driver(mu: float = 0.3) -> ProblemSpec:
    """Brownian state with g = mu |z|; the BSDE with terminal B_T has Y_0 = mu T."""
    return ProblemSpec(
        horizon=1.0,
        x0=(0.0,),
        drift=("0",),
        diffusion=(("1",),),
        control_grid_u=((0.0,),),
        control_grid_v=((0.0,),),
        generator="mu*abs(z)",
        parameters=(("mu", float(mu)),),
        leader_terminal="x",
        follower_terminal="x",
        generator_flags=GeneratorFlags(True, True, True),
        ellipticity_floor=0.5,
    )


def constant_cost() -> ProblemSpec:
    """Follower pays one unit per unit time and nothing else: V_f(t, x) = T - t."""
    return ProblemSpec(
        horizon=1.0,
        x0=(0.0,),
        drift=("u+v",),
        diffusion=(("1",),),
        control_grid_u=((0.0,),),
        control_grid_v=((-1.0,), (0.0,), (1.0,)),
        follower_running_cost="1",
        ellipticity_floor=0.5,
    )


def gaussian_heat() -> ProblemSpec:
    """Pure diffusion with terminal exp(-x^2/2); the value is (1+tau)^(-1/2) exp(-x^2/(2(1+tau)))."""
    return ProblemSpec(
        horizon=1.0,
        x0=(0.0,),
        drift=("0",),
        diffusion=(("1",),),
        control_grid_u=((0.0,),),
        control_grid_v=((0.0,),),
        follower_terminal="exp(-x^2/2)",
        leader_terminal="exp(-x^2/2)",
        ellipticity_floor=0.5,
    )


PRESETS = {
    "amput": american_put,
    "lq": linear_quadratic,
    "abs_z": abs_z_driver,
    "constant_cost": constant_cost,
    "gaussian_heat": gaussian_heat,
}
