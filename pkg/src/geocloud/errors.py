"""Exception hierarchy shared by all geocloud modules."""


class GeoCloudError(Exception):
    """Base class for every error raised by geocloud."""


class ParameterError(GeoCloudError, ValueError):
    pass


class ParseError(GeoCloudError, ValueError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class GridError(GeoCloudError, ValueError):
    pass


class AlignmentError(GridError):
    pass


class InsufficientHistoryError(GeoCloudError, ValueError):
    pass


class DomainError(GeoCloudError, ValueError):
    pass


class ModelError(GeoCloudError, ValueError):
    pass


class ActionError(GeoCloudError, ValueError):
    pass


class CapacityExhaustedError(GeoCloudError):
    def __init__(self, vm_ids):
        self.vm_ids = list(vm_ids)
        super().__init__(f"no PM can host VM(s) {self.vm_ids}")


class RepairError(GeoCloudError):
    def __init__(self, vm_ids):
        self.vm_ids = list(vm_ids)
        super().__init__(f"repair failed, unplaced VM(s) {self.vm_ids}")


class ConfigError(GeoCloudError, ValueError):
    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class SimulationError(GeoCloudError):
    def __init__(self, step, cause):
        self.step = step
        self.cause = cause
        super().__init__(f"step {step}: {cause}")
