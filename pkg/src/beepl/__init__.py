"""BeePL toolchain: parser, type-and-effect checker, reference interpreter
and a safety-preserving C code generator, plus the property harness that
exercises the language's metatheory as executable tests."""

__version__ = "0.1.0"
