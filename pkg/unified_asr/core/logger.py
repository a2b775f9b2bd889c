"""
Logger
Appends run events, resolved settings, epoch metrics and failures to one
plain-text log file.
"""

import os
import datetime
import traceback
from typing import Any, Dict, List, Mapping

from ..common import Config, format_chunk

DEFAULT_LOG_FILE = "~/.local/share/unified-asr/uasr.log"
RULE = "=" * 60


class Logger:
    """File logger for commands and training runs; a no-op unless enable_logging is set"""

    def __init__(self, config: Config):
        self.config = config
        self.log_file = os.path.expanduser(config.log_file or DEFAULT_LOG_FILE)

        if self.config.enable_logging:
            try:
                os.makedirs(os.path.dirname(os.path.abspath(self.log_file)), exist_ok=True)
            except OSError:
                pass

    @staticmethod
    def _timestamp() -> str:
        return datetime.datetime.now().strftime("%Y-%m-%d %H:%M:%S")

    def _append(self, lines: List[str]):
        if not self.config.enable_logging:
            return
        try:
            with open(self.log_file, "a", encoding="utf-8") as f:
                f.write("\n".join(lines) + "\n")
        except Exception:
            # Logging failures never stop a command
            pass

    def log_info(self, message: str, context: str = ""):
        self._append([f"[{self._timestamp()}] INFO ({context}): {message}"])

    def log_metrics(self, context: str, values: Mapping[str, Any]):
        """One key=value line, floats to four decimals"""
        fields = " ".join(f"{key}={value:.4f}" if isinstance(value, float) else f"{key}={value}"
                          for key, value in values.items())
        self._append([f"[{self._timestamp()}] METRICS ({context}): {fields}"])

    def log_config(self, config: Config, context: str = ""):
        """Settings that decide a run's outcome"""
        model, train, decode = config.model, config.train, config.decode
        self.log_metrics(context, {
            "seed": config.seed,
            "d_model": model.d_model,
            "layers": f"{model.n_enc_layers}+{model.n_dec_layers}",
            "vocab": model.vocab_size,
            "bridge": train.contrastive.bridge,
            "tau": train.contrastive.temperature,
            "lambda": train.ctc_weight,
            "chunk_policy": train.chunk_policy.mode,
            "decode_chunk": format_chunk(decode.chunk),
            "passes": decode.passes,
        })

    def log_error(self, error: BaseException, context: str = ""):
        """Error block with type, location details and traceback"""
        lines = [
            "",
            RULE,
            f"TIMESTAMP: {self._timestamp()}",
            f"CONTEXT: {context}",
            f"ERROR: {error}",
            f"TYPE: {type(error).__name__}",
        ]
        details: Dict[str, Any] = {name: getattr(error, name) for name in ("path", "line_number")
                                   if getattr(error, name, None) is not None}
        lines += [f"{name.upper()}: {value}" for name, value in details.items()]
        lines += ["TRACEBACK:", traceback.format_exc().rstrip(), RULE]
        self._append(lines)

    def get_log_path(self) -> str:
        return self.log_file

    def clear_log(self) -> bool:
        if not self.config.enable_logging:
            return False
        try:
            with open(self.log_file, "w", encoding="utf-8") as f:
                f.write(f"# Unified ASR log, cleared {self._timestamp()}\n")
            return True
        except Exception:
            return False

    def get_log_size(self) -> int:
        """Log file size in bytes, 0 when absent"""
        try:
            return os.path.getsize(self.log_file) if os.path.exists(self.log_file) else 0
        except OSError:
            return 0
