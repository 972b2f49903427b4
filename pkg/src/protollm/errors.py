"""Exception hierarchy shared by every protollm module."""


class ProtoLLMError(Exception):
    """Base class for domain errors (the CLI maps these to exit code 1)."""


# dataset
class MalformedSchema(ProtoLLMError):
    pass


class UnknownCategory(ProtoLLMError):
    def __init__(self, row, feature, token):
        super().__init__(f"row {row}: unknown category {token!r} for feature {feature!r}")
        self.row, self.feature, self.token = row, feature, token


class UnknownLabel(ProtoLLMError):
    def __init__(self, row, token):
        super().__init__(f"row {row}: unknown class label {token!r}")
        self.row, self.token = row, token


class NonNumeric(ProtoLLMError):
    def __init__(self, row, feature, token=None):
        super().__init__(f"row {row}: non-numeric value {token!r} for feature {feature!r}")
        self.row, self.feature, self.token = row, feature, token


class AllFeaturesDropped(ProtoLLMError):
    pass


class MissingCell(ProtoLLMError):
    def __init__(self, feature):
        super().__init__(f"missing value for feature {feature!r}")
        self.feature = feature


class EmptyPool(ProtoLLMError):
    pass


class InsufficientClassSamples(ProtoLLMError):
    def __init__(self, label, needed, available):
        super().__init__(f"class {label!r} needs {needed} training rows, only {available} available")
        self.label, self.needed, self.available = label, needed, available


# prompts
class WrongLabelSet(ProtoLLMError):
    pass


# gateway
class BackendUnavailable(ProtoLLMError):
    pass


class CacheCorrupt(ProtoLLMError):
    def __init__(self, path, line_no, reason):
        super().__init__(f"{path}:{line_no}: undecodable cache entry ({reason})")
        self.path, self.line_no, self.reason = path, line_no, reason


class UnknownFeatureInPrompt(ProtoLLMError):
    pass


class GatewayFrozen(ProtoLLMError):
    """Raised when a gateway call is attempted while inference is running."""


# parsing
class ParseError(ProtoLLMError):
    pass


class NoJsonFound(ParseError):
    pass


class JsonSyntax(ParseError):
    def __init__(self, position, msg=""):
        super().__init__(f"JSON syntax error at position {position}: {msg}")
        self.position = position


class MissingClassKey(ParseError):
    def __init__(self, label):
        super().__init__(f"reply has no entry for class {label!r}")
        self.label = label


class EmptyClassList(ParseError):
    def __init__(self, label):
        super().__init__(f"reply has no usable values for class {label!r}")
        self.label = label


class TypeMismatch(ParseError):
    def __init__(self, label, index):
        super().__init__(f"class {label!r}: value at index {index} has the wrong type")
        self.label, self.index = label, index


class NoNumericWeights(ParseError):
    pass


# prototype engine
class NonFiniteWeight(ProtoLLMError):
    pass


class ShapeMismatch(ProtoLLMError):
    pass


class LengthMismatch(ProtoLLMError):
    pass


class MissingPrototype(ProtoLLMError):
    pass


# augmentation / regression
class OutOfDomain(ProtoLLMError):
    pass


class EmptyTargets(ProtoLLMError):
    pass


class BadQuantiles(ProtoLLMError):
    pass


class ClassAnchorMismatch(ProtoLLMError):
    pass


# evaluation
class OneClassOnly(ProtoLLMError):
    pass
