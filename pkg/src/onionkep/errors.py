"""Exception hierarchy shared by all onionkep modules."""


class OnionKepError(Exception):
    """Base class for every error raised by this package."""


# -- modular arithmetic ------------------------------------------------------

class InvalidModulus(OnionKepError):
    """Modulus smaller than 2."""


class NonInvertible(OnionKepError):
    """gcd(a, modulus) != 1, so no multiplicative inverse exists."""


class NotPrime(OnionKepError):
    """An argument required to be prime failed the primality test."""


class GenerationFailed(OnionKepError):
    """Prime generation exhausted its attempt budget."""


class UnsupportedShape(OnionKepError):
    """Number does not have the safe-prime shape 2s+1 with s prime."""


# -- key exchange ------------------------------------------------------------

class MalformedSessionKey(OnionKepError):
    """Raw session key is not divisible by p*q; corrupted or adversarial."""


class BlockOutOfRange(OnionKepError):
    """Cipher block value is >= r."""


class MalformedCapture(OnionKepError):
    """Captured ciphertext is not divisible by p*q as the prefix attack requires."""


class DegenerateCapture(OnionKepError):
    """Captured prefix reduces to 0 mod r and cannot be inverted."""


class MalformedKeyFile(OnionKepError):
    """Key file is truncated, missing records, or internally inconsistent."""


# -- wire formats ------------------------------------------------------------

class EncodingOverflow(OnionKepError):
    """Integer does not fit in the requested fixed width."""


class MalformedPayload(OnionKepError):
    """Chunked ciphertext stream fails structural validation."""


class UnknownCommand(OnionKepError):
    """Cell command byte is not in the command vocabulary."""


class TruncatedCell(OnionKepError):
    """Cell bytes are shorter (or longer) than the declared layout."""


class UnknownSubcommand(OnionKepError):
    """Relay frame subcommand byte is not recognised."""


class TruncatedFrame(OnionKepError):
    """Relay frame bytes do not match the declared layout."""


# -- protocol / network ------------------------------------------------------

class NotReady(OnionKepError):
    """Operation requires a fully confirmed circuit."""


class CircuitIntegrityFailure(OnionKepError):
    """Key-confirmation digest did not match; circuit torn down."""


class DuplicateName(OnionKepError):
    """Directory re-registration under the same name with a different key."""


class NotFound(OnionKepError):
    """Directory has no descriptor under the requested name."""


class ParamsMismatch(OnionKepError):
    """Descriptor was produced under different system parameters."""


class StepBudgetExceeded(OnionKepError):
    """Simulator event loop exceeded its step budget."""


class FrameTooLarge(OnionKepError):
    """Stream frame exceeds the transport size cap."""
