#pragma once

#include <stdexcept>
#include <string>

namespace deepckpt {

// Base class for all library errors. Every failure mode documented in the
// module contracts derives from this, so callers can catch broadly or by kind.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// -- machine description ----------------------------------------------------

class SpecError : public Error {
public:
    SpecError(const std::string& field, const std::string& reason)
        : Error("spec error: " + field + ": " + reason), field_(field), reason_(reason) {}
    const std::string& field() const { return field_; }
    const std::string& reason() const { return reason_; }

private:
    std::string field_;
    std::string reason_;
};

class RouteError : public Error {
public:
    explicit RouteError(const std::string& msg) : Error("route error: " + msg) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

// -- simulated network / NAM -------------------------------------------------

class CapacityError : public Error {
public:
    explicit CapacityError(const std::string& msg) : Error("capacity error: " + msg) {}
};

class NotRegistered : public Error {
public:
    explicit NotRegistered(const std::string& msg) : Error("not registered: " + msg) {}
};

class GroupError : public Error {
public:
    explicit GroupError(const std::string& msg) : Error("group error: " + msg) {}
};

class UnknownNode : public Error {
public:
    explicit UnknownNode(const std::string& msg) : Error("unknown node: " + msg) {}
};

// -- container format ----------------------------------------------------------

class IoError : public Error {
public:
    explicit IoError(const std::string& msg) : Error("io error: " + msg) {}
};

class AlignError : public Error {
public:
    explicit AlignError(const std::string& msg) : Error("align error: " + msg) {}
};

class OverflowError : public Error {
public:
    explicit OverflowError(const std::string& msg) : Error("overflow: " + msg) {}
};

class DoubleWrite : public Error {
public:
    explicit DoubleWrite(const std::string& msg) : Error("double write: " + msg) {}
};

class CorruptChunk : public Error {
public:
    CorruptChunk(uint32_t rank, uint64_t offset, const std::string& msg)
        : Error("corrupt chunk: rank " + std::to_string(rank) + " at offset " +
                std::to_string(offset) + ": " + msg),
          rank_(rank), offset_(offset) {}
    uint32_t rank() const { return rank_; }
    uint64_t offset() const { return offset_; }

private:
    uint32_t rank_;
    uint64_t offset_;
};

class UnknownRank : public Error {
public:
    explicit UnknownRank(const std::string& msg) : Error("unknown rank: " + msg) {}
};

class NotAContainer : public Error {
public:
    explicit NotAContainer(const std::string& msg) : Error("not a container: " + msg) {}
};

// -- checkpoint engine ---------------------------------------------------------

class StrategyUnsupported : public Error {
public:
    explicit StrategyUnsupported(const std::string& msg) : Error("strategy unsupported: " + msg) {}
};

class TierFull : public Error {
public:
    explicit TierFull(const std::string& msg) : Error("tier full: " + msg) {}
};

class EmptyInput : public Error {
public:
    explicit EmptyInput(const std::string& msg) : Error("empty input: " + msg) {}
};

class HopError : public Error {
public:
    explicit HopError(const std::string& msg) : Error("hop error: " + msg) {}
};

class FlushError : public Error {
public:
    explicit FlushError(const std::string& msg) : Error("flush error: " + msg) {}
};

// -- recovery -------------------------------------------------------------------

class TooManyErasures : public Error {
public:
    explicit TooManyErasures(const std::string& msg) : Error("too many erasures: " + msg) {}
};

class CrcMismatch : public Error {
public:
    explicit CrcMismatch(const std::string& msg) : Error("crc mismatch: " + msg) {}
};

class PlanStale : public Error {
public:
    explicit PlanStale(const std::string& msg) : Error("plan stale: " + msg) {}
};

// -- task resiliency --------------------------------------------------------------

class RetriesExhausted : public Error {
public:
    explicit RetriesExhausted(const std::string& msg) : Error("retries exhausted: " + msg) {}
};

class LogCorrupt : public Error {
public:
    explicit LogCorrupt(const std::string& msg) : Error("log corrupt: " + msg) {}
};

class NoSurvivors : public Error {
public:
    explicit NoSurvivors(const std::string& msg) : Error("no survivors: " + msg) {}
};

// -- bench ------------------------------------------------------------------------

class ScenarioError : public Error {
public:
    explicit ScenarioError(const std::string& msg) : Error("scenario error: " + msg) {}
};

class Infeasible : public Error {
public:
    explicit Infeasible(const std::string& msg) : Error("infeasible: " + msg) {}
};

}  // namespace deepckpt
