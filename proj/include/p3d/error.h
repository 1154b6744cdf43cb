#pragma once

#include <stdexcept>
#include <string>

namespace p3d {

// Caller broke a documented precondition (shape mismatch, wrong length, ...).
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Versioned binary/text format could not be decoded.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Non-manifold meshes, degenerate faces, vertices behind the camera.
class GeometryError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// IoU with an empty union, MMD with too few groups, and similar.
class UndefinedMetric : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Training produced a NaN/Inf loss.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace p3d
