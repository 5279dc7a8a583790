"""Graph-conditioned diffusion text generation with adaptive token-wise noise schedules.

The package covers the full desk-scale pipeline: knowledge-graph parsing and
serialization, graph-text alignment, difficulty-driven schedule construction,
a small trainable denoiser with DDPM/DDIM sampling, and entity-grounded
evaluation metrics (FGT, ESR, BLEU).
"""

from graphdiffuse.kg import (
    KnowledgeGraph,
    TokenSequence,
    Triple,
    Vocab,
    build_vocab,
    decode,
    encode,
    parse_dataset,
    parse_serialized,
    serialize_graph,
)
from graphdiffuse.alignment import (
    AliasTable,
    AlignmentLink,
    AlignmentReport,
    detect_and_link,
    expand_aliases,
    score_alignment,
)
from graphdiffuse.schedule import (
    AnchorSchedule,
    CumulativeSchedule,
    DifficultyProfile,
    MappingConfig,
    PerStepCoeffs,
    TokenWiseSchedule,
    WindowSpec,
    anchor_from,
    blend,
    build_token_schedules,
    per_step,
    psi_map,
    snr,
    sqrt_baseline,
    table_schedule,
    window_stats,
)
from graphdiffuse.metrics import (
    EntitySets,
    ESRReport,
    FGTReport,
    GraphEdit,
    bleu,
    esr,
    extract_entity_sets,
    fgt,
    fgt_value,
    make_edit,
)

__version__ = "0.1.0"
