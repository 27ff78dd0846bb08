#include "graphdps/io.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace graphdps {

namespace {

std::string trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return std::string(s.substr(first, last - first + 1));
}

}  // namespace

void write_field(std::ostream& out, const NodeField& field)
{
    out << "FIELD " << field.size() << '\n';
    out << std::setprecision(17);
    for (Eigen::Index i = 0; i < field.size(); ++i) {
        out << field[i] << '\n';
    }
}

NodeField read_field(std::istream& in)
{
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line[0] != '#') {
            break;
        }
    }
    std::istringstream header(line);
    std::string tag;
    long n = -1;
    header >> tag >> n;
    if (tag != "FIELD" || n < 0) {
        throw Error("io", "malformed field header");
    }
    NodeField f(n);
    for (long i = 0; i < n; ++i) {
        if (!(in >> f[i])) {
            throw Error("io", "field file truncated");
        }
    }
    return f;
}

std::ofstream open_output(const std::filesystem::path& path)
{
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) {
            throw Error("io", "cannot create directory " + path.parent_path().string() + ": " + ec.message());
        }
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("io", "cannot write " + path.string());
    }
    return out;
}

void save_field(const std::filesystem::path& path, const NodeField& field, std::string_view header_comment)
{
    std::ofstream out = open_output(path);
    if (!header_comment.empty()) {
        out << "# " << header_comment << '\n';
    }
    write_field(out, field);
}

NodeField load_field(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw Error("io", "cannot read " + path.string());
    }
    return read_field(in);
}

KeyValues parse_key_values(std::istream& in, std::string_view source)
{
    KeyValues out;
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        const auto hash = line.find('#');
        const std::string body = trim(std::string_view(line).substr(0, hash));
        if (body.empty()) {
            continue;
        }
        const auto eq = body.find('=');
        const std::string where = std::string(source) + ":" + std::to_string(number) + ": ";
        if (eq == std::string::npos) {
            throw Error("config", where + "expected key = value");
        }
        std::string key = trim(std::string_view(body).substr(0, eq));
        std::string value = trim(std::string_view(body).substr(eq + 1));
        if (key.empty()) {
            throw Error("config", where + "empty key");
        }
        if (out.contains(key)) {
            throw Error("config", where + "duplicate key '" + key + "'");
        }
        out.emplace(std::move(key), std::move(value));
    }
    return out;
}

KeyValues load_key_values(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw Error("io", "cannot read " + path.string());
    }
    return parse_key_values(in, path.string());
}

void write_key_values(std::ostream& out, const KeyValues& values)
{
    for (const auto& [k, v] : values) {
        out << k << " = " << v << '\n';
    }
}

void save_key_values(const std::filesystem::path& path, const KeyValues& values, std::string_view header_comment)
{
    std::ofstream out = open_output(path);
    if (!header_comment.empty()) {
        out << "# " << header_comment << '\n';
    }
    write_key_values(out, values);
}

std::string format_double(double value)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), value);
    return std::string(buf, res.ptr);
}

}  // namespace graphdps
