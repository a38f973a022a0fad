"""abphase: Aharonov-Bohm phases by independent numerical routes.

The same phase is computed from the vector-potential Wilson loop, from
the enclosed magnetic flux, and from the gauge-invariant overlap of the
source field with the moving charge's own field, for solenoid, toroid,
and general open-source geometries, plus the electric twin of the
effect. Agreement between the routes at quantified tolerances is the
point of the package; see tests/test_acceptance.py.
"""

from .constants import NATURAL, SI, PhysicalConstants
from .engines import (
    CrossEnergyResult,
    ElectricScenario,
    GeometryError,
    MagneticScenario,
    ampere_reduction_phase,
    coulomb_cross_energy,
    electric_field_overlap_phase,
    electric_potential_phase,
    field_overlap_phase,
    flux_phase,
    reference_flux,
    shell_linking_phase,
    solenoid_axis_reduction_phase,
    wilson_loop_phase,
)
from .fields import (
    FieldSingularity,
    GaugeFunction,
    SourceField,
    b_field,
    builtin_gauge_family,
    delta_b_moving_charge,
    e_field_point_charges,
    field_evaluator,
    flux_through_loop,
    gauge_shifted_potential,
    vector_potential,
)
from .fieldlines import FieldLine, trace_field_line, trace_field_lines
from .quadrature import (
    Ball,
    Box,
    Cylinder,
    IntegrandError,
    QuadratureSpec,
    QuadResult,
    TorusTube,
    integrate_1d,
    integrate_3d,
    integrate_triangle_fan,
)
from .results import Method, PhaseResult, normalized_phase
from .scenario import (
    RunReport,
    ScenarioConfig,
    ValidationError,
    load_scenario,
    run_scenario,
    run_sweep,
)
from .sources import (
    CurrentLoop,
    FiniteSolenoid,
    IdealInfiniteSolenoid,
    PolylineCurrent,
    ToroidalCoil,
    finite_solenoid_loops,
    toroid_flux,
    toroid_loops,
)
from .topology import TopologyError, linking_number, winding_number
from .trajectories import (
    CircularOrbit,
    PiecewiseLinearLoop,
    PointCharge,
    StaticChargeConfig,
    trajectory_sample,
)
from .vectors import vec

__version__ = "0.1.0"
