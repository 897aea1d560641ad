#ifndef XFL_ERROR_HPP
#define XFL_ERROR_HPP

#include <stdexcept>
#include <string>

namespace xfl {

// Error categories map onto process exit codes in the CLI:
// Config -> 2, Data -> 3, Numeric -> 4.
enum class ErrorKind { Config, Data, Numeric };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string code, const std::string &what)
        : std::runtime_error(code + ": " + what), kind_(kind), code_(std::move(code)) {}

    ErrorKind kind() const { return kind_; }
    const std::string &code() const { return code_; }

private:
    ErrorKind kind_;
    std::string code_;
};

inline Error config_error(const std::string &code, const std::string &what) {
    return Error(ErrorKind::Config, code, what);
}
inline Error data_error(const std::string &code, const std::string &what) {
    return Error(ErrorKind::Data, code, what);
}
inline Error numeric_error(const std::string &code, const std::string &what) {
    return Error(ErrorKind::Numeric, code, what);
}

} // namespace xfl

#endif // XFL_ERROR_HPP
