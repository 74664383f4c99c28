"""Certified patch-robust image classification.

Builds covering mask sets, runs double-masking or challenger-masking
inference against any batch label oracle, certifies per-image
robustness, and verifies the guarantee by exhaustive adversary games on
small instances.
"""

from .adversary import (
    AdversaryStrategy,
    AttackReport,
    GameInstance,
    enumerate_free_slots,
    exhaustive_attack,
    generate_verification_family,
    randomized_attack,
)
from .certify import (
    Certificate,
    CertReason,
    DatasetMetrics,
    certify,
    certify_multi_patch,
    evaluate_dataset,
)
from .classifiers import (
    CallCounter,
    ClassifierHandle,
    Image,
    Label,
    RemoteClassifier,
    TableClassifier,
    apply_mask,
    predict_batch,
)
from .defense import (
    DefenseOutcome,
    ExitCase,
    MaskPredResult,
    challenger_masking,
    double_masking,
    mask_pred,
)
from .errors import (
    BackendUnavailable,
    ConstructionFailure,
    GeometryMismatch,
    MalformedImage,
    PatchShieldError,
    ResourceLimit,
)
from .masks import (
    ImageGeometry,
    MaskSet,
    MaskSpec,
    PatchThreatModel,
    compute_mask_params,
    generate_1d_index_set,
    generate_mask_set_1d,
    generate_mask_set_2d,
    generate_multi_patch_mask_set,
    generate_shape_cover_set,
    load_mask_set,
    mask_set_size,
    max_certified_patch_size,
    save_mask_set,
    verify_r_covering,
    verify_shape_cover,
)

__version__ = "0.1.0"
