#pragma once

#include <stdexcept>
#include <string>

namespace portajob {

// Base class for every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidSpec : public Error {
public:
    using Error::Error;
};

class InconsistentResources : public Error {
public:
    using Error::Error;
};

class IllegalTransition : public Error {
public:
    using Error::Error;
};

class WaitTimeout : public Error {
public:
    using Error::Error;
};

class UnboundJob : public Error {
public:
    using Error::Error;
};

class AlreadyBound : public Error {
public:
    using Error::Error;
};

class NotBound : public Error {
public:
    using Error::Error;
};

class TerminalState : public Error {
public:
    using Error::Error;
};

class SubmitFailed : public Error {
public:
    using Error::Error;
};

class CancelFailed : public Error {
public:
    using Error::Error;
};

class UnknownExecutor : public Error {
public:
    using Error::Error;
};

class NoVersionSatisfies : public Error {
public:
    using Error::Error;
};

class UnknownLauncher : public Error {
public:
    using Error::Error;
};

class TemplateError : public Error {
public:
    using Error::Error;
};

class NativeIdParseError : public Error {
public:
    using Error::Error;
};

class SpawnError : public Error {
public:
    using Error::Error;
};

class SpecFileError : public Error {
public:
    using Error::Error;
};

} // namespace portajob
