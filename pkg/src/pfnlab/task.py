from enum import Enum


class TaskType(str, Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"

    def __str__(self) -> str:
        return self.value
