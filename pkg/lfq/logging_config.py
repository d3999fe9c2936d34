"""
Logging setup shared by the library and the command line front end.

Standard library logging is configured through dictConfig with a single stdout
handler; structlog renders key-value events through the same handler.
"""

import logging
import logging.config
from typing import Optional

import structlog

from lfq.config import get_optional_env_var

LOG_LEVEL_ENV = "LFQ_LOG_LEVEL"
DEFAULT_LOG_LEVEL = "INFO"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")

_SHARED_PROCESSORS = [
    structlog.contextvars.merge_contextvars,
    structlog.stdlib.add_log_level,
    structlog.stdlib.add_logger_name,
    structlog.processors.TimeStamper(fmt="iso"),
]


def resolve_log_level(flag_value: Optional[str] = None) -> str:
    """Pick the log level from the flag, then the environment, then the default."""
    level = flag_value or get_optional_env_var(LOG_LEVEL_ENV, DEFAULT_LOG_LEVEL)
    level = str(level).upper()
    if level not in LOG_LEVELS:
        level = DEFAULT_LOG_LEVEL
    return level


def configure_logging(level: Optional[str] = None) -> None:
    """Configure stdlib logging and structlog for the whole process."""
    level = resolve_log_level(level)

    logging.config.dictConfig({
        'version': 1,
        'disable_existing_loggers': False,
        'formatters': {
            'standard': {
                '()': structlog.stdlib.ProcessorFormatter,
                'processors': [
                    structlog.stdlib.ProcessorFormatter.remove_processors_meta,
                    structlog.dev.ConsoleRenderer(colors=False),
                ],
                'foreign_pre_chain': _SHARED_PROCESSORS,
            },
        },
        'handlers': {
            'default': {
                'level': level,
                'formatter': 'standard',
                'class': 'logging.StreamHandler',
                'stream': 'ext://sys.stdout',
            },
        },
        'loggers': {
            '': {
                'handlers': ['default'],
                'level': level,
                'propagate': True
            }
        }
    })

    structlog.configure(
        processors=_SHARED_PROCESSORS + [
            structlog.stdlib.ProcessorFormatter.wrap_for_formatter,
        ],
        logger_factory=structlog.stdlib.LoggerFactory(),
        wrapper_class=structlog.stdlib.BoundLogger,
        cache_logger_on_first_use=True,
    )
