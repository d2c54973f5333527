import hashlib
import json
import logging
import time

logger = logging.getLogger(__package__)


class ConfigError(Exception):
    """Raised when the run configuration cannot be used."""


class OutOfBoundsError(IndexError):
    pass


class StageError(Exception):
    def __init__(self, stage, path):
        super().__init__(f"missing {path}; run the `{stage}` stage first")
        self.path = path
        self.stage = stage


class TrainingError(Exception):
    def __init__(self, message, *, epoch, batch, last_loss):
        super().__init__(
            f"{message} (epoch={epoch}, batch={batch}, last finite loss={last_loss})"
        )
        self.batch = batch
        self.epoch = epoch
        self.last_loss = last_loss


def canonical_json(value):
    return json.dumps(value, separators=(",", ":"), sort_keys=True)


def digest(data):
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def file_digest(path):
    sha = hashlib.sha256()
    with open(path, "rb") as fp:
        for chunk in iter(lambda: fp.read(1 << 16), b""):
            sha.update(chunk)
    return sha.hexdigest()


def log_function(*fields, klass=None, log_method=None, log_response=False):
    if not log_method:
        log_method = logger.debug

    def decorator(function):
        def wrapped(*args, **kwargs):
            arguments = ",".join(
                f"{field}={kwargs[field]!r}"
                for field in fields
                if kwargs.get(field) is not None
            )

            start = time.time() * 1000
            response = function(*args, **kwargs)
            duration = time.time() * 1000 - start

            description = f"{function.__name__}({arguments})"
            if klass:
                description = f"{klass}.{description}"
            if log_response:
                description = f"{description} = {response!r}"

            log_method(f"{description} in {duration:0.4f} ms")
            return response

        wrapped.__name__ = function.__name__
        wrapped.__doc__ = function.__doc__
        return wrapped

    return decorator
