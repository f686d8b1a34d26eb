#pragma once

#include <stdexcept>
#include <string>

namespace figclip {

// Base for everything this library throws. `kind()` is stable and is what the
// CLI maps to exit codes (validation -> 1, io/format -> 2).
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(kind + ": " + message), kind_(std::move(kind)) {}

    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

// JSON field missing or of the wrong type; message carries a JSON pointer.
struct SchemaError : Error {
    explicit SchemaError(const std::string& m) : Error("SchemaError", m) {}
};

// A domain invariant was violated; message names the offending video/event.
struct ValidationError : Error {
    explicit ValidationError(const std::string& m) : Error("ValidationError", m) {}
};

// Tensor shapes incompatible for an op; message names both shapes.
struct ShapeError : Error {
    explicit ShapeError(const std::string& m) : Error("ShapeError", m) {}
};

// Bad magic, truncation, or structural damage in a binary/JSONL file.
struct FormatError : Error {
    explicit FormatError(const std::string& m) : Error("FormatError", m) {}
};

// Hard-negative sampling pool has no usable candidate.
struct PoolExhausted : Error {
    explicit PoolExhausted(const std::string& m) : Error("PoolExhausted", m) {}
};

// Event cannot be rendered (e.g. zero roles).
struct TemplateError : Error {
    explicit TemplateError(const std::string& m) : Error("TemplateError", m) {}
};

// LoRA injection target is not a known weight type.
struct UnknownTarget : Error {
    explicit UnknownTarget(const std::string& m) : Error("UnknownTarget", m) {}
};

// Attempt to merge adapters into an already-merged backbone.
struct AlreadyMerged : Error {
    explicit AlreadyMerged(const std::string& m) : Error("AlreadyMerged", m) {}
};

struct EmptyDataset : Error {
    explicit EmptyDataset(const std::string& m) : Error("EmptyDataset", m) {}
};

// Training aborted (NaN guard, bad configuration for the chosen strategy, ...).
struct TrainError : Error {
    explicit TrainError(const std::string& m) : Error("TrainError", m) {}
};

struct MissingEmbedding : Error {
    explicit MissingEmbedding(const std::string& m) : Error("MissingEmbedding", m) {}
};

}  // namespace figclip
