"""FedPAQ: federated averaging with periodic rounds, partial participation and quantized uploads."""

from fedpaq._fedpaq import (
    ConfigError,
    Error,
    FormatError,
    InvalidInput,
    QuantizedVector,
    Unsupported,
    canonical,
    comm_comp_ratio,
    decode,
    default_variance_parameter,
    dequantize,
    encode,
    execute,
    normalize_config,
    payload_bits,
    quantize,
    solve_bandwidth,
    sweep,
    theory,
    theory_report,
    time_to_target,
)

__all__ = [
    "ConfigError",
    "Error",
    "FormatError",
    "InvalidInput",
    "QuantizedVector",
    "Unsupported",
    "canonical",
    "comm_comp_ratio",
    "decode",
    "default_variance_parameter",
    "dequantize",
    "encode",
    "execute",
    "normalize_config",
    "payload_bits",
    "quantize",
    "solve_bandwidth",
    "sweep",
    "theory",
    "theory_report",
    "time_to_target",
]
