"""Optimal expansion-stroke controls for a noisy quantum Otto engine.

Moment-level dynamics of a parametrically driven oscillator with control
noise, Legendre-Gauss-Lobatto transcription of the stroke-optimization
problem, an augmented-Lagrangian NLP solver, closed-form and feedback
reference controls, and a Monte-Carlo verifier of the moment closure.
"""

__version__ = "0.1.0"

from .controls import (
    BangProfile,
    ConstantProfile,
    ControlProfile,
    FeedbackProtocol,
    FeedbackRun,
    ProtocolError,
    ReferenceProfile,
    SampledProfile,
    dephasing_feedback,
    noiseless_feedback,
    ramp_duration,
    ramp_rate,
    reference_profile,
)
from .dynamics import (
    INITIAL_STATE,
    EngineConfig,
    MomentState,
    NoiseParams,
    PhysicalState,
    casimir_companion,
    casimir_growth_rate,
    efficiency_loss,
    from_physical,
    parasitic_energy,
    rhs,
    to_physical,
)
from .integrate import (
    DivergenceError,
    IntegrationOptions,
    ScoreResult,
    StiffnessError,
    Trajectory,
    integrate,
    score_control,
)
from .collocation import (
    CollocationProblem,
    LglGrid,
    NodalProfile,
    differentiation_matrix,
    interpolate_control,
    legendre_eval,
    lgl_nodes,
    transcribe,
)
from .montecarlo import (
    EnsembleMoments,
    MomentComparison,
    SdeOptions,
    compare_moments,
    ode_reference,
    simulate_ensemble,
)
from .solver import (
    BracketError,
    MinTimeResult,
    SolveOptions,
    SolveReport,
    SolveStatus,
    SweepPoint,
    min_feasible_time,
    solve,
    solve_at_duration,
    sweep_durations,
)
