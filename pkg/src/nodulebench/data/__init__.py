from .volume import AIR_HU, Volume, VolumeError, load_volume, save_volume
from .preprocess import (
    MAX_JITTER_VOX,
    TARGET_SPACING_MM,
    WINDOW_HI,
    WINDOW_LO,
    apply_augment,
    augment,
    crop_patch,
    normalize_intensity,
    patch_center_mm,
    prepare_input,
    resample_isotropic,
)
from .phantom import (
    DENSITIES,
    LOBES,
    PhantomResult,
    PhantomSpec,
    Primitive,
    classify_by_hand_rule,
    generate_patient_volume,
    generate_phantom,
    measure_nodule_bands,
)
from .manifest import (
    ATTRIBUTE_MODEL,
    DatasetConfig,
    DatasetManifest,
    ManifestError,
    NoduleAnnotation,
    PatientRecord,
    SPLITS,
    build_dataset,
    iter_loaded_nodules,
    split_counts,
)

__all__ = [
    "AIR_HU", "ATTRIBUTE_MODEL", "DENSITIES", "DatasetConfig", "DatasetManifest",
    "LOBES", "MAX_JITTER_VOX", "ManifestError", "NoduleAnnotation", "PatientRecord",
    "PhantomResult", "PhantomSpec", "Primitive", "SPLITS", "TARGET_SPACING_MM",
    "Volume", "VolumeError", "WINDOW_HI", "WINDOW_LO", "apply_augment", "augment",
    "build_dataset", "classify_by_hand_rule", "crop_patch", "generate_patient_volume",
    "generate_phantom", "iter_loaded_nodules", "load_volume", "measure_nodule_bands",
    "normalize_intensity", "patch_center_mm", "prepare_input", "resample_isotropic",
    "save_volume", "split_counts",
]
