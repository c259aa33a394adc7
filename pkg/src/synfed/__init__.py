"""Syntactic anonymization of relational-transactional data plus federated
training of linear classifiers over the anonymized shards."""

__version__ = "0.1.0"

from .anonymizer import AnonymizationParams, Cluster, anonymize, enforce_km, form_clusters, merge_clusters
from .dataset import (
    AnonymizedDataset,
    AttributeSchema,
    DatasetSchema,
    GeneralizedRecord,
    RTDataset,
    RTRecord,
    load_dataset,
    load_generalized,
    load_samples,
    load_schema,
    save_dataset,
    save_generalized,
    save_schema,
)
from .flsim import (
    CVResult,
    DPConfig,
    EncodedDataset,
    FLConfig,
    ModelParams,
    aggregate,
    cross_validate,
    evaluate_f1,
    partition,
    train_centralized,
    train_dp,
    train_federated,
)
from .hierarchy import Hierarchy, HNode, load_hierarchy, parse_hierarchy
from .mapping import (
    EncodingSchema,
    EquivalenceClass,
    MappingSet,
    encode_generalized,
    encode_raw,
    extract_mappings,
    is_legitimate,
    leaf_encoding,
    load_mappings,
    mapping_encoding,
    merge_mappings,
    save_mappings,
    select_mapping,
    transform,
)
from .metrics import (
    WeightVector,
    combined_mapping_loss,
    feature_importance,
    ncp_dataset,
    ncp_record,
    ncp_value,
    select_qids,
    ul_dataset,
    ul_item,
    ul_record,
)
from .synth import CategoricalAttr, ItemSpec, NumericAttr, SynthConfig, synth_generate
from .verifier import (
    Violation,
    check_generalization_sound,
    verify_k,
    verify_k_km,
    verify_km,
)
