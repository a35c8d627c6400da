"""
Configuration settings for the adaptorx training framework
"""
import os

from dotenv import load_dotenv

load_dotenv()


def _env_flag(name: str, default: bool) -> bool:
    """Read a boolean flag from the environment"""
    value = os.getenv(name)
    if value is None:
        return default
    return value.strip().lower() in ('1', 'true', 'yes', 'on')


# Runtime settings (overridable through the environment or a .env file)
LOG_LEVEL = os.getenv("ADAPTORX_LOG_LEVEL", "INFO")
DEFAULT_OUTPUT_DIR = os.getenv("ADAPTORX_OUTPUT_DIR", "runs")
DEFAULT_SEED = int(os.getenv("ADAPTORX_SEED", "1"))
SHOW_PROGRESS = _env_flag("ADAPTORX_SHOW_PROGRESS", True)

# Special tokens
PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
SPECIAL_TOKENS = ['<pad>', '<s>', '</s>', '<unk>']
UNK_TOKEN = SPECIAL_TOKENS[UNK_ID]
IGNORE_ID = -100

# Model dimensions (desk scale)
DEFAULT_D_MODEL = 64
DEFAULT_N_HEADS = 2
DEFAULT_ENC_LAYERS = 2
DEFAULT_DEC_LAYERS = 2
DEFAULT_FFN_DIM = 128
DEFAULT_MAX_LEN = 32
DEFAULT_DROPOUT = 0.0
LAYER_NORM_EPS = 1e-5
EMBEDDING_INIT_STD = 0.02
ATTENTION_MASK_VALUE = -1e9

HEAD_KINDS = ['seq2seq_lm', 'token_classification', 'sequence_classification']

# Optimizer
DEFAULT_LEARNING_RATE = 5e-4
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.98
DEFAULT_EPSILON = 1e-9

# Training loop
DEFAULT_BATCH_SIZE = 32
DEFAULT_EVAL_INTERVAL = 200
DEFAULT_LOG_INTERVAL = 50
DEFAULT_MAX_EVAL_SAMPLES = 200
DEFAULT_WARMUP_STEPS = 0

# Schedules
DEFAULT_PARALLEL_MAX_STEPS = 3000
DEFAULT_SEQUENTIAL_MAX_STEPS = 6000
SAMPLING_STRATEGIES = ['round_robin', 'uniform']

# Convergence
DEFAULT_PATIENCE = 5
DEFAULT_MIN_DELTA = 1e-3

# Evaluation
METRICS = ['bleu', 'token_accuracy', 'exact_match', 'val_loss']
GENERATIVE_METRICS = ['bleu', 'exact_match']
BLEU_MAX_ORDER = 4

# Denoising
DEFAULT_NOISE_WINDOW = 3
DEFAULT_PERMUTE_FRACTION = 1.0

# Synthetic corpora
DEFAULT_DATA_SEED = 1234
DEFAULT_TRAIN_SIZE = 2000
DEFAULT_VAL_SIZE = 200
MIN_SENTENCE_LENGTH = 4
MAX_SENTENCE_LENGTH = 12
SYNTHETIC_TOKEN_COUNT = 64
SYNTHETIC_DOMAINS = {
    'ID': {'first_token': 0, 'last_token': 39, 'transform': 'reverse_order'},
    'AD': {'first_token': 24, 'last_token': 63, 'transform': 'identity'},
    'OOD': {'first_token': 0, 'last_token': 63, 'transform': 'reverse_order'},
}
DOMAIN_ORDER = ['ID', 'AD', 'OOD']

# Checkpoint archive
MANIFEST_FILE = "manifest.tsv"
WEIGHTS_FILE = "weights.bin"
CONFIG_FILE = "config.json"
CHECKPOINT_DTYPE = '<f4'

# Export settings
LOG_COLUMNS = ['update', 'objective', 'split', 'metric', 'value']
RESULTS_COLUMNS = [
    'experiment', 'schedule', 'objectives',
    'bleu_id', 'bleu_ad', 'bleu_ood',
    'em_id', 'em_ad', 'em_ood',
    'acc_id', 'acc_ad', 'acc_ood',
]
LOG_FILE = "log.tsv"
RESULTS_FILE = "results.tsv"
ERROR_MARKER = "ERROR"
FLOAT_FORMAT = "%.4f"

JSON_INDENT = 2
