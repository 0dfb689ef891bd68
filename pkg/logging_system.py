"""
Structured Logging System
=========================

Run logging for the patient-letter pipeline:
- Structured JSON-lines log per run
- Size-rotated error log shared by all runs
- Human-readable console output on stderr
- Run metrics (LLM calls, trials, FHIR calls, errors)

Log files carry timestamps. Result artifacts (letters, audit trails,
eval tables) are written elsewhere and never do.
"""

import logging
import json
from pathlib import Path
from datetime import datetime, timezone
from typing import Optional, Dict, Any, Iterable
from logging.handlers import RotatingFileHandler
import sys


class StructuredLogger:
    """
    Structured logging system with JSON output and multiple handlers.

    Log Structure:
    {
        "timestamp": "2026-03-02T10:30:45.123Z",
        "level": "INFO",
        "run_id": "run_20260302_103045",
        "command": "reflect",
        "category": "trial",
        "message": "Trial 1: best candidate 2 (overall 0.998)",
        "metadata": {"best_index": 2, "best_overall": 0.998}
    }
    """

    def __init__(
        self,
        output_dir: Path,
        run_id: str,
        command: str = "reflect",
        log_level: str = "INFO",
        console: bool = True,
    ):
        self.output_dir = Path(output_dir)
        self.run_id = run_id
        self.command = command
        self.log_dir = self.output_dir / "logs"
        self.log_dir.mkdir(parents=True, exist_ok=True)

        self.logger = self._setup_logger(log_level, console)

        self.metrics = {
            'llm_calls': 0,
            'llm_calls_by_template': {},
            'trials': 0,
            'fhir_calls': 0,
            'errors': 0,
            'run_start': datetime.now().isoformat(),
        }

    @property
    def run_log_file(self) -> Path:
        return self.log_dir / f"run_{self.run_id}.jsonl"

    def _setup_logger(self, log_level: str, console: bool) -> logging.Logger:
        """Set up multi-handler logger with structured output."""
        logger = logging.getLogger(f"patient_letter.run.{self.run_id}")
        logger.setLevel(getattr(logging, log_level.upper()))
        logger.propagate = False
        logger.handlers = []  # Clear existing handlers

        # 1. Run-specific JSON log file (detailed)
        run_handler = logging.FileHandler(self.run_log_file, mode='a', encoding='utf-8')
        run_handler.setLevel(logging.DEBUG)
        run_handler.setFormatter(StructuredFormatter(self.run_id, self.command))
        logger.addHandler(run_handler)

        # 2. Error log file (errors only, size-based rotation)
        error_handler = RotatingFileHandler(
            self.log_dir / "errors.log",
            maxBytes=10*1024*1024,  # 10MB
            backupCount=5,
            encoding='utf-8',
        )
        error_handler.setLevel(logging.ERROR)
        error_handler.setFormatter(StructuredFormatter(self.run_id, self.command))
        logger.addHandler(error_handler)

        # 3. Console handler (human-readable, stderr keeps --json stdout clean)
        if console:
            console_handler = logging.StreamHandler(sys.stderr)
            console_handler.setLevel(logging.INFO)
            console_handler.setFormatter(ConsoleFormatter())
            logger.addHandler(console_handler)

        return logger

    def log_run_start(self, report_id: str, backend: str, **metadata):
        """Log run start."""
        self.logger.info(
            f"Run started: {self.command} {report_id} (backend: {backend})",
            extra={
                'category': 'run',
                'action': 'start',
                'report_id': report_id,
                'backend': backend,
                'metadata': metadata,
            }
        )

    def log_llm_call(self, key: str, template: str, duration_ms: float = 0.0, **metadata):
        """Log one completed LLM request."""
        self.metrics['llm_calls'] += 1
        by_template = self.metrics['llm_calls_by_template']
        by_template[template] = by_template.get(template, 0) + 1

        self.logger.debug(
            f"LLM: {key} ({duration_ms:.0f} ms)",
            extra={
                'category': 'llm',
                'key': key,
                'template': template,
                'duration_ms': duration_ms,
                'metadata': metadata,
            }
        )

    def log_codes_extracted(self, codes: Iterable[str], dropped: Iterable[str] = ()):
        """Log the validated reference code set."""
        codes = sorted(codes)
        dropped = sorted(dropped)
        self.logger.info(
            f"Reference codes: {', '.join(codes) or '(none)'}"
            + (f" (dropped {len(dropped)} invalid)" if dropped else ""),
            extra={
                'category': 'extraction',
                'codes': codes,
                'dropped': dropped,
            }
        )

    def log_trial(self, trial_index: int, best_index: int, best_overall: float,
                  best_so_far: float, **metadata):
        """Log a completed trial."""
        self.metrics['trials'] += 1
        self.logger.info(
            f"Trial {trial_index}: best candidate {best_index} "
            f"(overall {best_overall:.3f}, best so far {best_so_far:.3f})",
            extra={
                'category': 'trial',
                'trial_index': trial_index,
                'best_index': best_index,
                'best_overall': best_overall,
                'best_so_far': best_so_far,
                'metadata': metadata,
            }
        )

    def log_feedback(self, trial_index: int, feedback: str):
        """Log feedback carried into the next trial."""
        self.logger.info(
            f"Feedback after trial {trial_index} ({len(feedback)} chars)",
            extra={
                'category': 'feedback',
                'trial_index': trial_index,
                'feedback': feedback,
            }
        )

    def log_fhir_call(self, operation: str, resource: str, status: int, duration_ms: float = 0.0):
        """Log a FHIR request."""
        self.metrics['fhir_calls'] += 1
        level = logging.INFO if 200 <= status < 300 else logging.WARNING
        self.logger.log(
            level,
            f"FHIR {operation} {resource} -> {status}",
            extra={
                'category': 'fhir',
                'operation': operation,
                'resource': resource,
                'status': status,
                'duration_ms': duration_ms,
            }
        )

    def log_error(self, error_type: str, error_message: str, **metadata):
        """Log error with metadata."""
        self.metrics['errors'] += 1
        self.logger.error(
            f"Error: {error_type} - {error_message}",
            extra={
                'category': 'error',
                'error_type': error_type,
                'error_message': error_message,
                'metadata': metadata,
            },
            exc_info=sys.exc_info()[0] is not None,
        )

    def log_run_end(self, status: str, **metadata):
        """Log run end with metrics summary."""
        self.metrics['run_end'] = datetime.now().isoformat()
        level = logging.INFO if status == "ok" else logging.WARNING
        self.logger.log(
            level,
            f"Run finished: {status}",
            extra={
                'category': 'run',
                'action': 'end',
                'status': status,
                'metrics': self.metrics,
                'metadata': metadata,
            }
        )

    def close(self):
        """Flush and detach all handlers."""
        for handler in list(self.logger.handlers):
            handler.flush()
            handler.close()
            self.logger.removeHandler(handler)


class StructuredFormatter(logging.Formatter):
    """JSON formatter for structured logging."""

    EXTRA_FIELDS = [
        'category', 'action', 'report_id', 'backend', 'key', 'template',
        'duration_ms', 'codes', 'dropped', 'trial_index', 'best_index',
        'best_overall', 'best_so_far', 'feedback', 'operation', 'resource',
        'status', 'error_type', 'error_message', 'metrics', 'metadata',
    ]

    def __init__(self, run_id: str, command: str):
        super().__init__()
        self.run_id = run_id
        self.command = command

    def format(self, record: logging.LogRecord) -> str:
        """Format log record as JSON."""
        log_data = {
            'timestamp': datetime.now(timezone.utc).isoformat().replace('+00:00', 'Z'),
            'level': record.levelname,
            'run_id': self.run_id,
            'command': self.command,
            'message': record.getMessage(),
        }

        for field in self.EXTRA_FIELDS:
            if hasattr(record, field):
                log_data[field] = getattr(record, field)

        if record.exc_info:
            log_data['exception'] = self.formatException(record.exc_info)

        return json.dumps(log_data, default=str)


class ConsoleFormatter(logging.Formatter):
    """Human-readable console formatter with colors."""

    COLORS = {
        'DEBUG': '\033[36m',    # Cyan
        'INFO': '\033[32m',     # Green
        'WARNING': '\033[33m',  # Yellow
        'ERROR': '\033[31m',    # Red
        'CRITICAL': '\033[35m', # Magenta
        'RESET': '\033[0m'
    }

    ICONS = {
        'run': '🚀',
        'llm': '💬',
        'extraction': '🏷️',
        'trial': '🔁',
        'feedback': '📝',
        'fhir': '🏥',
        'error': '❌',
        'default': 'ℹ️'
    }

    def __init__(self, use_color: Optional[bool] = None):
        super().__init__()
        self.use_color = sys.stderr.isatty() if use_color is None else use_color

    def format(self, record: logging.LogRecord) -> str:
        """Format log record for console with colors and icons."""
        color = self.COLORS.get(record.levelname, '') if self.use_color else ''
        reset = self.COLORS['RESET'] if self.use_color else ''

        category = getattr(record, 'category', 'default')
        icon = self.ICONS.get(category, self.ICONS['default'])
        timestamp = datetime.now().strftime('%H:%M:%S')

        return f"{color}{icon} [{timestamp}] {record.getMessage()}{reset}"


def create_logger(
    output_dir: Path,
    run_id: Optional[str] = None,
    command: str = "reflect",
    log_level: str = "INFO",
    console: bool = True,
) -> StructuredLogger:
    """
    Factory function to create structured logger.

    Usage:
        logger = create_logger(Path("output"), command="reflect")
        logger.log_run_start("report_01", backend="scripted")
        logger.log_trial(0, best_index=1, best_overall=0.65, best_so_far=0.65)
        logger.log_run_end("ok")
        logger.close()
    """
    if run_id is None:
        run_id = datetime.now().strftime('%Y%m%d_%H%M%S_%f')

    return StructuredLogger(output_dir, run_id, command, log_level, console)


def configure_console_logging(verbose: bool = False):
    """Route module loggers (logging.getLogger(__name__)) to stderr."""
    root = logging.getLogger()
    if any(getattr(h, '_patient_letter_console', False) for h in root.handlers):
        return
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    handler._patient_letter_console = True
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if verbose else logging.WARNING)
