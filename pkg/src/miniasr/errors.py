"""Exception hierarchy shared by all modules."""


class MiniAsrError(Exception):
    """Base class for every error raised by the toolkit."""


# front-end
class WaveTooShort(MiniAsrError):
    pass


class BadSampleRate(MiniAsrError):
    pass


class BadWavFile(MiniAsrError):
    pass


class CorruptFeatFile(MiniAsrError):
    pass


# corpus
class ParseError(MiniAsrError):
    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class UnknownPhone(MiniAsrError):
    pass


# language model
class EmptyCorpus(MiniAsrError):
    pass


class OovToken(MiniAsrError):
    pass


class CorruptLmFile(MiniAsrError):
    pass


# acoustic model
class UnknownToken(MiniAsrError):
    pass


class NoTrainingData(MiniAsrError):
    pass


class UtteranceTooShort(MiniAsrError):
    pass


class BadSchedule(MiniAsrError):
    pass


class CorruptModelFile(MiniAsrError):
    pass


# decoder
class MissingPronunciation(MiniAsrError):
    def __init__(self, words):
        self.words = sorted(words)
        super().__init__("LM words without pronunciation: " + " ".join(self.words))


class EmptyFeatures(MiniAsrError):
    pass


class NoSurvivingPath(MiniAsrError):
    pass


# scoring
class EmptyTestSet(MiniAsrError):
    pass


class ConfigError(MiniAsrError):
    pass
