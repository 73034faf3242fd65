import sys
from src.logger import logging


def error_message_detail(error, error_detail: sys):
    _, _, exc_tb = error_detail.exc_info()
    if exc_tb is None:
        return str(error)
    file_name = exc_tb.tb_frame.f_code.co_filename
    error_message = (
        "Error occured in python script name [{0}] line number [{1}] error message[{2}]"
        .format(file_name, exc_tb.tb_lineno, str(error))
    )

    return error_message


class CustomException(Exception):
    def __init__(self, error_message, error_detail: sys = None):
        super().__init__(error_message)
        if error_detail is None:
            self.error_message = str(error_message)
        else:
            self.error_message = error_message_detail(error_message, error_detail=error_detail)

    def __str__(self):
        return self.error_message


class ShapeMismatchError(CustomException, ValueError):
    """Operand shapes disagree with what an op or layer expects."""


class NonFiniteError(CustomException, ArithmeticError):
    """A tensor picked up NaN or Inf."""


class ConfigError(CustomException, ValueError):
    pass


class DataFormatError(CustomException, ValueError):
    pass


class CheckpointError(CustomException, ValueError):
    pass

