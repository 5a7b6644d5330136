#
# Copyright (c) 2026 The mikecoco developers
#
# This file is part of mikecoco, distributed under the BSD 3-Clause
# License. See the LICENSE file in the repository root for details.
#

"""Constants, basic classes, and methods for mikecoco."""

from __future__ import annotations

import hashlib
import json
import random
import sys
import traceback
import warnings
from datetime import datetime, timezone
from pathlib import Path
from typing import TYPE_CHECKING, Any, ClassVar, TypeVar

import colorama
import numpy as np
import pandas as pd
import torch
from colorama import Fore, Style

from mikecoco.mikecoco_warnings import MikecocoInvalidConfigError, MikecocoWarning

if TYPE_CHECKING:
    from collections.abc import Iterable
    from types import TracebackType


colorama.init()

pd.options.display.max_rows = 20
pd.options.display.max_columns = None  # type: ignore
pd.options.display.width = 300

T = TypeVar('T')

# get the absolute path of the mikecoco directory
mikecoco_path = Path(__file__).resolve().parent


class Options:
    """
    Runtime options and logging configuration.

    Attributes
    ----------
    deterministic: bool
        If True, the input pipeline runs a single producer and torch is
        switched to deterministic algorithms so that loss traces are
        reproducible on one platform.
    workers: int
        Number of producer threads feeding the training queue. Forced
        to 1 in deterministic mode.
    queue_size: int
        Capacity of the bounded batch queue between the producers and
        the training loop.
    device: str
        Torch device string used for all models.
    log: Logger
        Logger object. Configuration parameters coming from the user's
        configuration dictionary or the default configuration file
        control logging behavior. See Logger class.

    """

    __slots__ = [
        '_seed',
        'deterministic',
        'device',
        'log',
        'queue_size',
        'workers',
    ]

    def __init__(self, user_config_options: dict[str, Any] | None) -> None:
        """
        Initialize an Options object.

        Parameters
        ----------
        user_config_options: dict, Optional
            User-specified configuration dictionary. Any provided
            user_config_options override the defaults.

        """
        merged_config_options = merge_default_config(user_config_options)

        self.seed = merged_config_options['Seed']
        self.deterministic = str2bool(merged_config_options['Deterministic'])
        self.workers = 1 if self.deterministic else merged_config_options['Workers']
        self.queue_size = merged_config_options['QueueSize']
        self.device = merged_config_options['Device']

        # instantiate a Logger object with the finalized configuration
        self.log = Logger(
            merged_config_options['LogFile'],
            verbose=merged_config_options['Verbose'],
            quiet=merged_config_options['Quiet'],
            log_show_ms=merged_config_options['LogShowMS'],
            print_log=merged_config_options['PrintLog'],
            log_format=merged_config_options['LogFormat'],
        )

        if self.deterministic:
            torch.use_deterministic_algorithms(mode=True, warn_only=True)

    @property
    def seed(self) -> int | None:
        """
        Seed property.

        Returns
        -------
        int
            Seed value

        """
        return self._seed

    @seed.setter
    def seed(self, value: int | None) -> None:
        """Seed property setter."""
        self._seed = value
        if value is not None:
            seed_everything(value)


class LoggerRegistry:
    """Registry to manage all logger instances."""

    _loggers: ClassVar[list[Logger]] = []

    @classmethod
    def register(cls, logger: Logger) -> None:
        """Register a logger instance."""
        cls._loggers.append(logger)

    @classmethod
    def log_exception(
        cls,
        exc_type: type[BaseException],
        exc_value: BaseException,
        exc_traceback: TracebackType | None,
    ) -> None:
        """Log exceptions to all registered loggers."""
        message = (
            f"Unhandled exception occurred:"
            f"\n"
            f"{''.join(traceback.format_exception(exc_type, exc_value, exc_traceback))}"
        )
        for logger in cls._loggers:
            logger.msg(message, level='error')

        sys.__excepthook__(exc_type, exc_value, exc_traceback)


sys.excepthook = LoggerRegistry.log_exception


class Logger:
    """Generate log files documenting execution events."""

    __slots__ = [
        'emitted',
        'log_file',
        'log_format',
        'log_show_ms',
        'log_time_format',
        'print_log',
        'quiet',
        'spaces',
        'verbose',
        'warning_file',
        'warning_stack',
    ]

    def __init__(
        self,
        log_file: str | None,
        *,
        verbose: bool,
        log_show_ms: bool,
        print_log: bool,
        quiet: bool = False,
        log_format: str = 'text',
    ) -> None:
        """
        Initialize a Logger object.

        Parameters
        ----------
        log_file: str, optional
            If a value is provided, the log is written to that file and
            warnings are also collected in `<name>_warnings<ext>` next
            to it.
        verbose: bool
            If True, debug messages are also written.
        log_show_ms: bool
            If True, the timestamps in the log are in microsecond
            precision.
        print_log: bool
            If True, the log is also printed to standard output.
        quiet: bool
            If True, only warnings and errors are printed to standard
            output. The log file still receives every message.
        log_format: str
            Either `text` for timestamped lines or `jsonl` for one JSON
            object per message.

        Raises
        ------
        MikecocoInvalidConfigError
            If the log format is not recognized.

        """
        if log_format not in {'text', 'jsonl'}:
            msg = f'Unknown log format `{log_format}`. Use `text` or `jsonl`.'
            raise MikecocoInvalidConfigError(msg)

        self.verbose = str2bool(verbose)
        self.quiet = str2bool(quiet)
        self.log_show_ms = bool(log_show_ms)
        self.log_format = log_format

        if log_file is None:
            self.log_file = None
            self.warning_file = None
        else:
            path = Path(log_file)
            path.parent.mkdir(parents=True, exist_ok=True)
            self.log_file = str(path.resolve())
            self.warning_file = (
                path.parent / (path.stem + '_warnings' + path.suffix)
            ).resolve()
            Path(self.log_file).write_text('', encoding='utf-8')
            Path(self.warning_file).write_text('', encoding='utf-8')

        self.print_log = str2bool(print_log)
        self.warning_stack: list[str] = []
        self.emitted: set[str] = set()
        self.reset_log_strings()
        control_warnings()

        LoggerRegistry.register(self)

    def reset_log_strings(self) -> None:
        """Populate the string-related attributes of the logger."""
        if self.log_show_ms:
            self.log_time_format = '%H:%M:%S:%f'
            self.spaces = ' ' * 16
        else:
            self.log_time_format = '%H:%M:%S'
            self.spaces = ' ' * 9

    def _write(self, formatted_msg: str, *, echo: bool) -> None:
        if self.print_log and echo:
            print(formatted_msg)  # noqa: T201

        if self.log_file is not None:
            with Path(self.log_file).open('a', encoding='utf-8') as f:
                f.write(formatted_msg + '\n')

    def msg(
        self,
        msg: str = '',
        *,
        prepend_timestamp: bool = True,
        prepend_blank_space: bool = True,
        level: str = 'info',
        **fields: Any,  # noqa: ANN401
    ) -> None:
        """
        Write a message in the log with the current time as prefix.

        Parameters
        ----------
        msg: string
            Message to print.
        prepend_timestamp: bool
            Controls whether a timestamp is placed before the message.
            Ignored by the `jsonl` format, which always stamps records.
        prepend_blank_space: bool
            Controls whether blank space is placed before the message.
        level: str
            One of `debug`, `info`, `warning`, `error`.
        fields: Any
            Additional key-value pairs. Added to the record in the
            `jsonl` format and appended as `key=value` in `text`.

        """
        if level == 'debug' and not self.verbose:
            return
        echo = not (self.quiet and level in {'debug', 'info'})

        if self.log_format == 'jsonl':
            record = {
                'time': datetime.now(timezone.utc).isoformat(),
                'level': level,
                'msg': msg,
            }
            record.update(fields)
            self._write(json.dumps(record, default=str), echo=echo)
            return

        if fields:
            msg = msg + ' ' + ' '.join(f'{k}={v}' for k, v in fields.items())

        for msg_i, msg_line in enumerate(msg.split('\n')):
            if prepend_timestamp and (msg_i == 0):
                formatted_msg = (
                    f'{datetime.now().strftime(self.log_time_format)} {msg_line}'  # noqa: DTZ005
                )
            elif prepend_timestamp or prepend_blank_space:
                formatted_msg = self.spaces + msg_line
            else:
                formatted_msg = msg_line
            self._write(formatted_msg, echo=echo)

    def debug(self, msg: str, **fields: Any) -> None:  # noqa: ANN401
        """Write a message that only appears in verbose mode."""
        self.msg(msg, level='debug', **fields)

    def add_warning(self, msg: str) -> None:
        """
        Add a warning to the warning stack.

        Notes
        -----
        Warnings are only emitted when `emit_warnings` is called.

        Parameters
        ----------
        msg: str
            The warning message.

        """
        formatted_msg = '\n'
        for msg_line in msg.split('\n'):
            formatted_msg += (
                self.spaces + Fore.RED + msg_line + Style.RESET_ALL + '\n'
            )
        if formatted_msg not in self.warning_stack:
            self.warning_stack.append(formatted_msg)

    def emit_warnings(self) -> None:
        """Issues all warnings and clears the warning stack."""
        for message in self.warning_stack:
            if message not in self.emitted:
                plain = (
                    message.replace(Fore.RED, '')
                    .replace(Style.RESET_ALL, '')
                    .replace(self.spaces, '')
                )
                if not self.quiet or self.log_format == 'text':
                    warnings.warn(message, MikecocoWarning, stacklevel=3)
                if self.log_format == 'jsonl':
                    self.msg(plain.strip(), level='warning')
                if self.warning_file is not None:
                    with Path(self.warning_file).open('a', encoding='utf-8') as f:
                        f.write(plain)

        self.emitted = self.emitted.union(set(self.warning_stack))
        self.warning_stack = []

    def warning(self, msg: str) -> None:
        """
        Add and emit a warning immediately.

        Parameters
        ----------
        msg: str
            Warning message

        """
        self.add_warning(msg)
        self.emit_warnings()

    def print_system_info(self) -> None:
        """Write system information in the log."""
        self.msg(
            'System Information:',
            prepend_timestamp=False,
            prepend_blank_space=False,
            level='debug',
        )
        start = datetime.now().strftime('%Y-%m-%dT%H:%M:%S')  # noqa: DTZ005
        self.msg(
            f'local time zone: {datetime.now(timezone.utc).astimezone().tzinfo}\n'
            f'start time: {start}\n'
            f'python: {sys.version}\n'
            f'numpy: {np.__version__}\n'
            f'pandas: {pd.__version__}\n'
            f'torch: {torch.__version__}\n',
            prepend_timestamp=False,
            level='debug',
        )


def control_warnings() -> None:
    """
    Turn warnings on/off.

        See also: `pytest.ini`. Make sure to update that file when
        addressing & eliminating warnings.

    """
    if not sys.warnoptions:
        warnings.filterwarnings(
            action='ignore',
            message='.*enable_nested_tensor is True.*',
        )
        warnings.filterwarnings(
            action='ignore',
            message='.*does not have a deterministic implementation.*',
        )


def _warning(
    message: str,
    category: type[Warning],
    filename: str,
    lineno: int,
    file: Any = None,  # noqa: ARG001, ANN401
    line: Any = None,  # noqa: ARG001, ANN401
) -> None:
    """
    Display warnings in a custom format.

    Parameters
    ----------
    message: str
        The warning message to be displayed.
    category: Warning
        The category of the warning.
    filename: str
        The path of the file from which the warning is issued. The
        function simplifies the path for display.
    lineno: int
        The line number in the file at which the warning is issued.
    file: file-like object, optional
        Unused, required for compatibility with the standard signature.
    line: str, optional
        Unused, required for compatibility with the standard signature.

    """
    if category != MikecocoWarning:
        python_file = '/'.join(Path(filename).parts[-3:])
        print(  # noqa: T201
            f'WARNING in {python_file} at line {lineno}\n{message}\n',
            file=sys.stderr,
        )
    else:
        print(message, file=sys.stderr)  # noqa: T201


warnings.showwarning = _warning  # type: ignore


def load_default_config() -> dict:
    """
    Load the default_config.json file.

    Returns
    -------
    dict
        Default configuration with `Options` and `Training` sections.

    """
    with Path(mikecoco_path / 'settings/default_config.json').open(
        encoding='utf-8'
    ) as f:
        return json.load(f)


def update_vals(
    update_value: dict, primary: dict, update_path: str, primary_path: str
) -> None:
    """
    Transfer values between nested dictionaries.

    Keys of `primary` that are missing from `update_value` are added
    to it. Existing non-dictionary values are left unchanged; nested
    dictionaries are handled recursively.

    Parameters
    ----------
    update_value: dict
        Dictionary to be completed with the values of `primary`.
    primary: dict
        Dictionary providing the fallback values.
    update_path: str
        Identifier for the update dictionary. Used in error messages.
    primary_path: str
        Identifier for the primary dictionary. Used in error messages.

    Raises
    ------
    MikecocoInvalidConfigError
      If the nesting of the two dictionaries does not agree at a key.

    """
    for key, primary_value in primary.items():
        if isinstance(primary_value, dict):
            if key not in update_value:
                update_value[key] = {}
            elif not isinstance(update_value[key], dict):
                msg = (
                    f'{update_path}["{key}"] should map to a dictionary. '
                    f'The specified value is {update_value[key]}, but the '
                    f'default value is {primary_path}["{key}"] = '
                    f'{primary_value}. Please revise {update_path}["{key}"].'
                )
                raise MikecocoInvalidConfigError(msg)
            update_vals(
                update_value[key],
                primary_value,
                f'{update_path}["{key}"]',
                f'{primary_path}["{key}"]',
            )
        elif key not in update_value:
            update_value[key] = primary_value
        elif isinstance(update_value[key], dict):
            msg = (
                f'{update_path}["{key}"] should not map to a dictionary. '
                f'The specified value is {update_value[key]}, but the '
                f'default value is {primary_path}["{key}"] = {primary_value}. '
                f'Please revise {update_path}["{key}"].'
            )
            raise MikecocoInvalidConfigError(msg)


def merge_default_config(
    user_config: dict | None, section: str = 'Options'
) -> dict:
    """
    Merge a section of the default config with the user's values.

    Parameters
    ----------
    user_config: dict
        User-specified configuration dictionary.
    section: str
        Section of default_config.json to fill in from.

    Returns
    -------
    dict
        Merged configuration dictionary

    """
    config = {} if user_config is None else dict(user_config)
    update_vals(config, load_default_config()[section], 'user_settings', section)
    return config


def str2bool(v: str | bool) -> bool:  # noqa: FBT001
    """
    Convert a string representation of truth to boolean True or False.

    Parameters
    ----------
    v: str or bool
        The value to convert into a boolean.

    Returns
    -------
    bool
        The boolean value corresponding to the input.

    Raises
    ------
    MikecocoInvalidConfigError
        If `v` is a string that does not correspond to a boolean value.

    """
    if isinstance(v, bool):
        return v
    if v.lower() in {'yes', 'true', 't', 'y', '1'}:
        return True
    if v.lower() in {'no', 'false', 'f', 'n', '0'}:
        return False
    msg = f'Boolean value expected, received `{v}`.'
    raise MikecocoInvalidConfigError(msg)


def dict_raise_on_duplicates(ordered_pairs: list[tuple]) -> dict:
    """
    Construct a dictionary from key-value pairs, rejecting duplicates.

    Used as the `object_pairs_hook` of `json.load` for configuration
    files.

    Parameters
    ----------
    ordered_pairs: list of tuples
        A list of (key, value) tuples.

    Returns
    -------
    dict
        The constructed dictionary.

    Raises
    ------
    MikecocoInvalidConfigError
        If a key appears more than once.

    """
    d = {}
    for k, v in ordered_pairs:
        if k in d:
            msg = f'duplicate key: {k}'
            raise MikecocoInvalidConfigError(msg)
        d[k] = v
    return d


def ensure_value(value: T | None) -> T:
    """
    Ensure a variable is not None.

    Parameters
    ----------
    value : Optional[T]
        The variable to check.

    Returns
    -------
    T
        The same variable, guaranteed to be non-None.

    Raises
    ------
    TypeError
        If the provided variable is None.

    """
    if value is None:
        raise TypeError
    return value


def seed_everything(seed: int) -> None:
    """Seed the python, numpy and torch random number generators."""
    random.seed(seed)
    np.random.seed(seed % 2**32)  # noqa: NPY002
    torch.manual_seed(seed)


def derive_seed(*parts: int) -> int:
    """
    Derive a child seed from a master seed and indices.

    The result depends only on the given integers, so the same
    (master seed, epoch, index) triple always yields the same seed
    regardless of the order in which workers draw them.

    Returns
    -------
    int
        A 63-bit non-negative seed.

    """
    sequence = np.random.SeedSequence([int(p) & 0xFFFFFFFF for p in parts])
    return int(sequence.generate_state(2, dtype=np.uint32).view(np.uint64)[0]) >> 1


def parameter_hash(parameters: Iterable[torch.Tensor]) -> str:
    """
    Hash the exact bytes of a parameter collection.

    Returns
    -------
    str
        Hex sha256 digest. Two collections hash equal only when every
        tensor is bit-identical and in the same order.

    """
    digest = hashlib.sha256()
    for tensor in parameters:
        array = tensor.detach().cpu().contiguous().numpy()
        digest.update(str(array.shape).encode())
        digest.update(array.tobytes())
    return digest.hexdigest()


def config_hash(config: dict[str, Any]) -> str:
    """
    Hash a configuration dictionary.

    Returns
    -------
    str
        Hex sha256 digest of the key-sorted JSON rendering.

    """
    text = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(text.encode('utf-8')).hexdigest()
