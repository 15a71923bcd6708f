from .ledger import DOWN, UP, Channel, CommLedger, LedgerEntry
from .protocols import (
    FedConfig,
    FGLConfig,
    RunResult,
    aggregate_params,
    aggregate_prompts,
    collect_and_synthesize,
    run_centralized,
    run_fedavg,
    run_fgl_multiround,
    run_fgl_oneshot,
    select_clients,
)
from .wire import (
    HEADER_SIZE,
    SERVER_ID,
    Message,
    MessageKind,
    decode_message,
    encode_message,
    frame_size,
    model_payload_size,
)
