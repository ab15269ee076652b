import logging
import logging.config
from datetime import datetime, timezone
from typing import Dict, Any, Optional
import json
from pathlib import Path


def setup_logging(log_level: str = "INFO", log_file: Optional[str] = None, json_logs: bool = False):
    """
    Set up logging for the command-line tools.

    Console output always; a rotating file handler when log_file is given.
    """
    log_level = log_level.upper()
    console_formatter = 'json' if json_logs else 'standard'

    handlers = {
        'console': {
            'level': log_level,
            'formatter': console_formatter,
            'class': 'logging.StreamHandler',
            'stream': 'ext://sys.stderr'
        }
    }
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        handlers['file'] = {
            'level': log_level,
            'formatter': 'json' if json_logs else 'detailed',
            'class': 'logging.handlers.RotatingFileHandler',
            'filename': str(log_file),
            'maxBytes': 10485760,  # 10MB
            'backupCount': 5
        }

    logging_config = {
        'version': 1,
        'disable_existing_loggers': False,
        'formatters': {
            'standard': {
                'format': '%(asctime)s [%(levelname)s] %(name)s: %(message)s'
            },
            'detailed': {
                'format': '%(asctime)s [%(levelname)s] %(name)s:%(lineno)d: %(message)s'
            },
            'json': {
                '()': JsonFormatter
            }
        },
        'handlers': handlers,
        'loggers': {
            'jiadf': {
                'handlers': list(handlers),
                'level': log_level,
                'propagate': False
            }
        },
        'root': {
            'handlers': ['console'],
            'level': 'WARNING'
        }
    }

    logging.config.dictConfig(logging_config)

    logger = logging.getLogger(__name__)
    logger.debug(f"Logging initialized with level {log_level}")
    if log_file:
        logger.debug(f"Log file: {log_file}")


class JsonFormatter(logging.Formatter):
    """
    JSON formatter for structured logging
    """
    def format(self, record):
        log_entry = {
            'timestamp': datetime.fromtimestamp(record.created, tz=timezone.utc).isoformat(),
            'level': record.levelname,
            'logger': record.name,
            'message': record.getMessage(),
            'module': record.module,
            'function': record.funcName,
            'line': record.lineno,
        }

        if record.exc_info:
            log_entry['exception'] = self.formatException(record.exc_info)

        if hasattr(record, 'extra_fields'):
            log_entry.update(record.extra_fields)

        return json.dumps(log_entry)


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(name)


def log_epoch(epoch: int, train_loss: float, val_macro_f1: float, lr: float, run: str = None):
    """
    Log one training epoch
    """
    logger = get_logger('jiadf.training')
    fields = {
        'epoch': epoch,
        'train_loss': train_loss,
        'val_macro_f1': val_macro_f1,
        'lr': lr,
    }
    if run:
        fields['run'] = run
    run_str = f" run={run}" if run else ""
    logger.info(
        f"EPOCH epoch={epoch} train_loss={train_loss:.6f} val_macro_f1={val_macro_f1:.4f} lr={lr:.3g}{run_str}",
        extra={'extra_fields': fields}
    )


def log_performance(metric_name: str, value: float, unit: str = "", tags: Dict[str, Any] = None):
    """
    Log performance metrics
    """
    logger = get_logger('jiadf.performance')
    tags_str = f" tags={json.dumps(tags, sort_keys=True)}" if tags else ""
    logger.info(
        f"PERFORMANCE metric={metric_name} value={value} unit={unit}{tags_str}",
        extra={'extra_fields': {
            'metric_name': metric_name,
            'value': value,
            'unit': unit,
            'tags': tags or {}
        }}
    )
