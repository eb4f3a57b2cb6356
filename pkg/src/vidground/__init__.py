"""vidground: joint visual-text embeddings from per-second video features and
timestamped ASR tokens, with grounding diagnostics (intra-video and segment
AUC, category aggregation, step-localization recall, regression attribution).
"""

from .corpus import (
    AsrToken,
    Corpus,
    FeatureTrack,
    SamplerConfig,
    Segment,
    VideoRecord,
    Vocabulary,
    build_vocabulary,
    load_asr,
    load_corpus,
    load_feature_track,
    sample_nonoverlapping,
    sample_segments,
    write_feature_track,
)
from .model import (
    EmbeddingView,
    GatedUnitParams,
    JointEmbeddingModel,
    ModelConfig,
    embed_text,
    embed_visual,
    gated_forward,
    init_model,
    load_checkpoint,
    save_checkpoint,
    similarity,
    similarity_matrix,
)
from .trainer import (
    AdamState,
    Batch,
    TrainConfig,
    adam_step,
    hinge_loss,
    loss_and_gradients,
    sample_batch,
    train,
)
from .metrics import (
    CategoryReport,
    GroundingReport,
    aggregate_by_category,
    auc,
    compute_grounding,
    correlations,
    intra_video_auc,
    segment_auc,
    win_rate,
)
from .localization import ScoreGrid, StepAnnotation, dp_align, recall, score_grid
from .analysis import DesignMatrix, OlsFit, build_design, f_test_nested, ols_fit
from .synth import CategoryTemplate, SyntheticSpec, generate_corpus

__version__ = "0.1.0"
