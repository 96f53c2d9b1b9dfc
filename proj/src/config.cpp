#include "pbat/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>

namespace pbat {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view value) {
    T out{};
    const char* end = value.data() + value.size();
    auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) {
        throw std::invalid_argument("config: invalid value '" + std::string(value) + "' for key " +
                                    std::string(key));
    }
    return out;
}

}  // namespace

void ModelDims::validate() const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("model config: " + what); };
    if (D == 0) fail("D must be positive");
    if (L < 2) fail("L must be >= 2");
    if (heads == 0) fail("heads must be positive");
    if (D % heads != 0) fail("heads must divide D");
    if (blocks == 0) fail("N_blocks must be positive");
}

Config parse_config(std::string_view text) {
    Config cfg;
    auto& m = cfg.model;
    auto& t = cfg.train;
    using Setter = std::function<void(std::string_view, std::string_view)>;
    const std::map<std::string, Setter, std::less<>> setters = {
        {"D", [&](auto k, auto v) { m.D = parse_number<std::size_t>(k, v); }},
        {"L", [&](auto k, auto v) { m.L = parse_number<std::size_t>(k, v); }},
        {"N_blocks", [&](auto k, auto v) { m.blocks = parse_number<std::size_t>(k, v); }},
        {"heads", [&](auto k, auto v) { m.heads = parse_number<std::size_t>(k, v); }},
        {"D_ff", [&](auto k, auto v) { m.d_ff = parse_number<std::size_t>(k, v); }},
        {"num_users", [&](auto k, auto v) { m.num_users = parse_number<std::uint32_t>(k, v); }},
        {"num_items", [&](auto k, auto v) { m.num_items = parse_number<std::uint32_t>(k, v); }},
        {"num_behaviors", [&](auto k, auto v) { m.num_behaviors = parse_number<std::uint32_t>(k, v); }},
        {"rho", [&](auto k, auto v) { t.rho = parse_number<double>(k, v); }},
        {"dropout", [&](auto k, auto v) { t.dropout = parse_number<double>(k, v); }},
        {"lr", [&](auto k, auto v) { t.lr = parse_number<double>(k, v); }},
        {"batch_size", [&](auto k, auto v) { t.batch_size = parse_number<std::size_t>(k, v); }},
        {"epochs", [&](auto k, auto v) { t.epochs = parse_number<std::size_t>(k, v); }},
        {"seed", [&](auto k, auto v) { t.seed = parse_number<std::uint64_t>(k, v); }},
    };

    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t eol = text.find('\n', pos);
        if (eol == std::string_view::npos) eol = text.size();
        std::string_view line = text.substr(pos, eol - pos);
        pos = eol + 1;
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key = value");
        }
        const auto key = trim(line.substr(0, eq));
        const auto value = trim(line.substr(eq + 1));
        const auto it = setters.find(key);
        if (it == setters.end()) {
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": unknown key '" +
                                        std::string(key) + "'");
        }
        it->second(key, value);
    }
    m.validate();
    if (!(t.rho > 0.0 && t.rho < 1.0)) throw std::invalid_argument("config: rho must lie in (0, 1)");
    if (!(t.dropout >= 0.0 && t.dropout < 1.0)) throw std::invalid_argument("config: dropout must lie in [0, 1)");
    if (!(t.lr >= 0.0)) throw std::invalid_argument("config: lr must be non-negative");
    if (t.batch_size == 0) throw std::invalid_argument("config: batch_size must be positive");
    return cfg;
}

Config load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string format_config(const Config& c) {
    std::ostringstream out;
    out.precision(17);
    out << "D = " << c.model.D << "\nL = " << c.model.L << "\nN_blocks = " << c.model.blocks
        << "\nheads = " << c.model.heads << "\nD_ff = " << c.model.d_ff << "\nnum_users = " << c.model.num_users
        << "\nnum_items = " << c.model.num_items << "\nnum_behaviors = " << c.model.num_behaviors
        << "\nrho = " << c.train.rho << "\ndropout = " << c.train.dropout << "\nlr = " << c.train.lr
        << "\nbatch_size = " << c.train.batch_size << "\nepochs = " << c.train.epochs
        << "\nseed = " << c.train.seed << "\n";
    return out.str();
}

}  // namespace pbat
