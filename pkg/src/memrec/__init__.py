"""Memory-enhanced sequential conversational recommender.

Per-user entity memory banks refined from historical dialogue sessions,
shared general memory (expert candidates + reasoning guidelines), two-stage
memory retrieval, and a model-orchestrated recommender, with an offline
evaluation harness and a live chat service.
"""

from .dialogue import (
    CatalogItem,
    Corpus,
    DialogueSession,
    EvaluationPoint,
    Speaker,
    Split,
    UserRecord,
    Utterance,
    chronological_split,
    evaluation_points,
    filter_duplicate_targets,
    load_corpus,
    read_corpus,
    save_corpus,
)
from .evaluation import (
    EvalReport,
    HarnessConfig,
    compare_reports,
    count_tokens,
    hit_rate_at_k,
    mrr_at_k,
    ndcg_at_k,
    run_experiment,
)
from .general_memory import (
    CoVisitExpert,
    ExpertModelPort,
    ExternalExpert,
    GuidelineSet,
    Outcome,
    ReflectionRecord,
    expert_candidates,
    reflect,
    seed_manual_guidelines,
    train_covisit,
)
from .llm import HttpLlm, LanguageModelPort, MockLlm, OutputKind, StructuredOutput, complete, mock_program
from .memory_bank import MemoryBank, MemoryEntry, MemoryStore
from .prompts import PromptTemplate, TemplateName, load_templates, render
from .recommender import (
    GeneralMemoryState,
    PipelineConfig,
    Ports,
    Provenance,
    RecommendationRequest,
    RecommendationResult,
    recommend,
    run_pipeline,
)
from .retrieval import (
    Embedder,
    HashNgramEmbedder,
    HttpEmbedder,
    RetrievalConfig,
    RetrievedMemory,
    cosine,
    prefilter,
    retrieve,
)
from .variants import MemoryMode, VariantSpec, variant_by_name

__version__ = "0.1.0"
