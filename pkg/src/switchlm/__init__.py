"""Token-routed ensemble of small language models.

Expert models are represented inside a frozen meta model's output layer as
extra rows ("expert tokens"); routing a query to an expert is just
next-token prediction over the extended vocabulary, and a gateway hands the
generation off to whichever model the meta model names.
"""

from .vocab import Vocabulary, default_vocabulary, expert_token_string
from .domains import (
    DOMAIN_NAMES,
    QueryResponsePair,
    answer_for,
    dedup_filter,
    generate_domain,
    grade,
)
from .collector import CollectorConfig, ExpertQuerySet, collect, loss_gap
from .head import (
    ExpertInfo,
    ExpertTokenHead,
    extend_head,
    extended_distribution,
    extended_logits,
    init_head,
    load_head,
    save_head,
    train_head,
)
from .optim import AdamW, TrainConfig
from .orchestrator import (
    GenerationResult,
    Limits,
    LocalBackend,
    RoutingDecision,
    generate,
    route_only,
    trace_record,
)
from .wire import BackendServer, RemoteBackend, serve_backend
from .gateway import (
    BackendDescriptor,
    Gateway,
    GatewayClient,
    GatewayConfig,
    GatewayServer,
    load_gateway_config,
)
from .experiment import ExperimentConfig, Workdir, load_experiment_config, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "BackendDescriptor",
    "BackendServer",
    "CollectorConfig",
    "DOMAIN_NAMES",
    "ExperimentConfig",
    "ExpertInfo",
    "ExpertQuerySet",
    "ExpertTokenHead",
    "Gateway",
    "GatewayClient",
    "GatewayConfig",
    "GatewayServer",
    "GenerationResult",
    "Limits",
    "LocalBackend",
    "QueryResponsePair",
    "RemoteBackend",
    "RoutingDecision",
    "TrainConfig",
    "Vocabulary",
    "Workdir",
    "answer_for",
    "collect",
    "dedup_filter",
    "default_vocabulary",
    "expert_token_string",
    "extend_head",
    "extended_distribution",
    "extended_logits",
    "generate",
    "generate_domain",
    "grade",
    "init_head",
    "load_experiment_config",
    "load_gateway_config",
    "load_head",
    "loss_gap",
    "route_only",
    "run_pipeline",
    "save_head",
    "serve_backend",
    "trace_record",
    "train_head",
    "__version__",
]
