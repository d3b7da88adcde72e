"""Constants for the verimas failure-attribution toolkit."""

# Verification labels
LABEL_ENTAIL = "A"
LABEL_NEUTRAL = "B"
LABEL_CONTRADICT = "C"
LABELS = (LABEL_ENTAIL, LABEL_NEUTRAL, LABEL_CONTRADICT)

LABEL_NAMES = {
    LABEL_ENTAIL: "entail",
    LABEL_NEUTRAL: "neutral",
    LABEL_CONTRADICT: "contradict",
}

# Attribution strategies
STRATEGY_VERIFY = "verify"
STRATEGY_DPR = "dpr"
STRATEGY_DIRECT_ERROR = "direct_error"
STRATEGY_COT_ERROR = "cot_error"
STRATEGY_DIRECT_AGENT = "direct_agent"
STRATEGY_COT_AGENT = "cot_agent"
STRATEGY_MAP_LABEL = "map_label"

ATTRIBUTION_STRATEGIES = (
    STRATEGY_VERIFY,
    STRATEGY_DPR,
    STRATEGY_DIRECT_ERROR,
    STRATEGY_COT_ERROR,
    STRATEGY_DIRECT_AGENT,
    STRATEGY_COT_AGENT,
)
PROMPT_STRATEGIES = ATTRIBUTION_STRATEGIES + (STRATEGY_MAP_LABEL,)

# Prompt stages (what a single request asks for)
STAGE_VERIFY = "verify"
STAGE_PAIRS = "pairs"
STAGE_ERRORS = "errors"
STAGE_AGENTS_FOR_ERROR = "agents_for_error"
STAGE_AGENTS = "agents"
STAGE_ERRORS_FOR_AGENT = "errors_for_agent"
STAGE_MAP_LABEL = "map_label"

# Error categories (context needed to detect an error)
CATEGORY_GLOBAL = "global"
CATEGORY_LOCAL = "local"
CATEGORY_HYBRID = "hybrid"
CATEGORY_UNASSIGNED = "unassigned"
CATEGORIES = (CATEGORY_GLOBAL, CATEGORY_LOCAL, CATEGORY_HYBRID, CATEGORY_UNASSIGNED)

# Error families, keyed by the code group number
FAMILIES = {
    "1": "task_execution",
    "2": "communication_coordination",
    "3": "quality_verification",
}
FAMILY_OTHER = "other"

ERROR_CODE_PATTERN = r"FM-\d+\.\d+"

# Scoring levels
LEVEL_PAIR = "pair"
LEVEL_AGENT = "agent"
LEVEL_ERROR = "error"
LEVELS = (LEVEL_PAIR, LEVEL_AGENT, LEVEL_ERROR)

# Corpus provenance
PROVENANCE_GOLD = "gold"
PROVENANCE_COUNTER_EVIDENCE = "counter_evidence"
PROVENANCE_NEARBY_NEUTRAL = "nearby_neutral"
PROVENANCE_OVERSAMPLE = "oversample_copy"

# Verifier endpoint
API_KEY_ENV = "VERIMAS_API_KEY"
MOCK_SCHEME = "mock"
DEFAULT_ENDPOINT = "https://api.openai.com/v1"
DEFAULT_MODEL = "gpt-4.1"
DEFAULT_TEMPERATURE = 0.0
DEFAULT_MAX_OUTPUT = 512
DEFAULT_RETRIES = 2
DEFAULT_CONCURRENCY = 8
DEFAULT_TIMEOUT = 120
DEFAULT_BACKOFF = 1.0
RETRYABLE_STATUS = (429, 500, 502, 503, 504)
AUTH_FAILURE_STATUS = (401, 403)

# Trajectory rendering
DEFAULT_RENDER_BUDGET = 48_000

# Corpus construction
DEFAULT_CONTRADICT_PER_TRAJECTORY = 2
DEFAULT_NEUTRAL_PER_TRAJECTORY = 1
DEFAULT_RARE_AGENT_THRESHOLD = 20
DEFAULT_OVERSAMPLE_FACTOR = 2
DEFAULT_SEED = 0

# Dataset split: a fixed-size test sample per group, the rest split train/validation
DEFAULT_TEST_PER_GROUP = 100
DEFAULT_VAL_RATIO = 0.2
GROUP_BY_SOURCE = "source"
GROUP_BY_NONE = "none"
GROUP_BY = (GROUP_BY_SOURCE, GROUP_BY_NONE)

# Label split of the reference hypothesis-verification corpus (33,481 instances)
REFERENCE_SPLIT = {
    LABEL_ENTAIL: 0.5302,
    LABEL_NEUTRAL: 0.1723,
    LABEL_CONTRADICT: 0.2975,
}

# Hyperparameters handed to the external trainer
TRAINING_CONFIG = {
    "training_strategy": "fsdp",
    "learning_rate": 1e-4,
    "train_batch_size": 64,
    "micro_batch_size_per_gpu": 2,
    "max_length": 8192,
    "total_epochs": 2,
    "lora_rank": 64,
    "lora_alpha": 16,
    "target_modules": "all-linear",
    "gradient_clipping": 1.0,
    "weight_decay": 0.01,
    "lr_scheduler": "cosine",
    "warmup_steps_ratio": 0.1,
    "precision": "bf16",
    "gradient_checkpointing": True,
    "cpu_offload": "params",
    "num_gpus": 2,
}

# CLI commands and exit codes
COMMAND_ATTRIBUTE = "attribute"
COMMAND_BUILD_SFT = "build-sft"
COMMAND_EVALUATE = "evaluate"
COMMAND_TAXONOMY = "taxonomy"
COMMAND_VALIDATE = "validate"
COMMAND_CONVERT = "convert"
COMMAND_SPLIT = "split"
COMMANDS = (
    COMMAND_ATTRIBUTE,
    COMMAND_BUILD_SFT,
    COMMAND_EVALUATE,
    COMMAND_TAXONOMY,
    COMMAND_VALIDATE,
    COMMAND_CONVERT,
    COMMAND_SPLIT,
)

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_PARTIAL = 2
EXIT_ENDPOINT_ERROR = 3

# Output file names inside --out
ATTRIBUTIONS_FILE = "attributions.jsonl"
ERRORS_FILE = "errors.jsonl"
MANIFEST_FILE = "manifest.json"
CORPUS_FILE = "sft.jsonl"
STATS_FILE = "stats.json"
TRAIN_CONFIG_FILE = "train_config.yaml"
REPORT_FILE = "report.json"
REPORT_CSV_FILE = "report.csv"
CONVERTED_FILE = "trajectories.jsonl"
SPLIT_TRAIN_FILE = "train.jsonl"
SPLIT_VALIDATION_FILE = "validation.jsonl"
SPLIT_TEST_FILE = "test.jsonl"

# Source layouts accepted by the converters
SOURCE_AEGIS = "aegis"
SOURCE_WHOWHEN = "whowhen"
SOURCES = (SOURCE_AEGIS, SOURCE_WHOWHEN)
