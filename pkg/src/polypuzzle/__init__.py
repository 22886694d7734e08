"""polypuzzle: rays, puzzles and combinatorial nests for polynomials with a
superattracting basin."""

__version__ = "0.1.0"

from .angles import (
    ItineraryWord,
    RationalAngle,
    angle_to_itinerary,
    as_angle,
    orbit_type,
    shift,
    times_base,
)
from .parabolic import (
    BlaschkeModel,
    ParabolicTree,
    blaschke_model,
    fatou_coordinate_model,
    parabolic_ray_model,
    parabolic_tree,
)
from .nest import (
    AResult,
    BResult,
    ChildScan,
    Classification,
    CriticalEnd,
    CriticalOrbitTable,
    Entrance,
    NestRecord,
    NestStage,
    OmegaComb,
    OrbitTable,
    PcResult,
    ReturnTime,
    Successor,
    SuccessorScan,
    TrackedCritical,
    build_Pc,
    certificate_log,
    children,
    classify_recurrence,
    critical_table,
    enhanced_nest,
    find_nest_start,
    first_entrance,
    last_successor,
    nest_record_to_json,
    omega_comb,
    operator_A,
    operator_B,
    orbit_table,
    piece_at,
    refine_return_time,
    return_time,
    successors,
)
from .poly import (
    CriticalPoint,
    EscapeResult,
    Polynomial,
    PotentialValue,
    bottcher_external,
    bottcher_internal,
    classify,
    evaluate,
    green_potential,
    internal_potential,
    superattracting_degree,
)
from .puzzle import (
    DepthZeroAtlas,
    PieceGeometry,
    PieceId,
    PuzzleSpec,
    build_spec,
    contains,
    depth0_atlas,
    geometry,
    image,
    locate,
    piece_degree,
    pieces_to_json,
    word_is_admissible,
)
from .rays import (
    ColandingReport,
    EquipotentialPath,
    LandingResult,
    RayPath,
    colanding_report,
    equipotential,
    iterate_polynomial,
    land_external_ray,
    trace_external_ray,
    trace_internal_ray,
    trace_ray_field,
)

__all__ = [
    "ItineraryWord",
    "RationalAngle",
    "angle_to_itinerary",
    "as_angle",
    "orbit_type",
    "shift",
    "times_base",
    "CriticalPoint",
    "EscapeResult",
    "Polynomial",
    "PotentialValue",
    "bottcher_external",
    "bottcher_internal",
    "classify",
    "evaluate",
    "green_potential",
    "internal_potential",
    "superattracting_degree",
    "AResult",
    "BResult",
    "ChildScan",
    "Classification",
    "CriticalEnd",
    "CriticalOrbitTable",
    "Entrance",
    "NestRecord",
    "NestStage",
    "OmegaComb",
    "OrbitTable",
    "PcResult",
    "ReturnTime",
    "Successor",
    "SuccessorScan",
    "TrackedCritical",
    "build_Pc",
    "certificate_log",
    "children",
    "classify_recurrence",
    "critical_table",
    "enhanced_nest",
    "find_nest_start",
    "first_entrance",
    "last_successor",
    "nest_record_to_json",
    "omega_comb",
    "operator_A",
    "operator_B",
    "orbit_table",
    "piece_at",
    "refine_return_time",
    "return_time",
    "successors",
    "BlaschkeModel",
    "ParabolicTree",
    "blaschke_model",
    "fatou_coordinate_model",
    "parabolic_ray_model",
    "parabolic_tree",
    "DepthZeroAtlas",
    "PieceGeometry",
    "PieceId",
    "PuzzleSpec",
    "build_spec",
    "contains",
    "depth0_atlas",
    "geometry",
    "image",
    "locate",
    "piece_degree",
    "pieces_to_json",
    "word_is_admissible",
    "ColandingReport",
    "EquipotentialPath",
    "LandingResult",
    "RayPath",
    "colanding_report",
    "equipotential",
    "iterate_polynomial",
    "land_external_ray",
    "trace_external_ray",
    "trace_internal_ray",
    "trace_ray_field",
    "__version__",
]
