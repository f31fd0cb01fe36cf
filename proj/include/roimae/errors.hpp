#ifndef ROIMAE_ERRORS_HPP
#define ROIMAE_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace roimae {

// Malformed or unsupported on-disk data. `code` identifies the offending
// field so callers (and tests) can tell the failure modes apart.
class io_error : public std::runtime_error {
public:
    enum class code {
        open_failed,
        bad_magic,
        paired_file,       // "ni1\0" two-file NIfTI, not supported
        bad_header_size,
        bad_rank,
        unsupported_datatype,
        bad_vox_offset,
        truncated_data,
        label_datatype,    // floating-point data where labels are required
        negative_label,
        bad_metadata,      // .v4d sidecar / model file / config problems
        write_failed,
    };

    io_error(code c, const std::string& what) : std::runtime_error(what), code_(c) {}
    code kind() const noexcept { return code_; }

private:
    code code_;
};

// Violated precondition on an in-memory operation (dimension mismatch,
// out-of-range index, bad configuration value).
class invalid_argument : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Training diverged (NaN/Inf gradient or parameter).
class numeric_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace roimae

#endif
