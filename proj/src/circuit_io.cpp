#include "cspn/circuit_io.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace cspn {

namespace {

using nlohmann::json;

void write_real(std::ostream& os, double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 17);
    os.write(buf, ptr - buf);
}

void write_reals(std::ostream& os, const double* data, long count) {
    os << '[';
    for (long i = 0; i < count; ++i) {
        if (i) os << ',';
        write_real(os, data[i]);
    }
    os << ']';
}

void write_ints(std::ostream& os, const std::vector<int>& v) {
    os << '[';
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) os << ',';
        os << v[i];
    }
    os << ']';
}

// Row-major copy; Eigen storage is column-major by default.
std::vector<double> row_major(const Eigen::MatrixXd& m) {
    std::vector<double> out;
    out.reserve(m.size());
    for (int r = 0; r < m.rows(); ++r)
        for (int c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
    return out;
}

double get_real(const json& j, const char* key, int node_id) {
    if (!j.contains(key) || !j[key].is_number())
        throw ParseError("node " + std::to_string(node_id) + ": missing numeric field \"" + key +
                         "\"");
    return j[key].get<double>();
}

}  // namespace

std::string circuit_to_json(const Circuit& circuit) {
    std::ostringstream os;
    os << "{\"format_version\":1,\"num_y\":" << circuit.num_y()
       << ",\"num_x\":" << circuit.num_x() << ",\"root\":" << circuit.root() << ",\"nodes\":[";
    for (int id = 0; id < circuit.node_count(); ++id) {
        const Node& n = circuit.node(id);
        if (id) os << ',';
        os << "{\"id\":" << n.id << ",\"kind\":\"";
        switch (n.kind) {
            case NodeKind::Leaf: os << "leaf"; break;
            case NodeKind::Product: os << "product"; break;
            case NodeKind::Gating: os << "gating"; break;
        }
        os << "\",\"scope\":";
        write_ints(os, n.scope);
        if (!n.children.empty()) {
            os << ",\"children\":";
            write_ints(os, n.children);
        }
        if (n.gate) {
            os << ",\"gate\":{\"kind\":\"";
            if (const auto* c = std::get_if<GateConstant>(&*n.gate)) {
                os << "constant\",\"params\":";
                write_reals(os, c->weights.data(), c->weights.size());
            } else {
                const auto& s = std::get<GateSoftmax>(*n.gate);
                os << "softmax\",\"params\":";
                const auto flat = row_major(s.coeffs);
                write_reals(os, flat.data(), static_cast<long>(flat.size()));
            }
            os << '}';
        }
        if (n.leaf) {
            const GlmLeaf& leaf = *n.leaf;
            os << ",\"leaf\":{\"family\":\"" << family_name(leaf.family) << "\",\"link\":\""
               << link_name(leaf.link) << "\",\"coeffs\":";
            const auto flat = row_major(leaf.coeffs);
            write_reals(os, flat.data(), static_cast<long>(flat.size()));
            os << ",\"extra\":{";
            bool first = true;
            if (leaf.family == LeafFamily::Gaussian) {
                os << "\"dispersion\":";
                write_real(os, leaf.dispersion);
                first = false;
            }
            if (leaf.family == LeafFamily::Categorical) {
                if (!first) os << ',';
                os << "\"categories\":" << leaf.num_categories();
            }
            os << "}}";
        }
        os << '}';
    }
    os << "]}";
    return os.str();
}

void save_circuit(const Circuit& circuit, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write model file: " + path);
    out << circuit_to_json(circuit) << '\n';
}

Circuit circuit_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("model file: ") + e.what() + " (byte " +
                         std::to_string(e.byte) + ")");
    }
    if (!doc.is_object() || !doc.contains("format_version"))
        throw ParseError("model file: missing format_version");
    if (doc["format_version"].get<int>() != 1)
        throw ParseError("model file: unsupported format_version " +
                         doc["format_version"].dump());
    const int num_y = doc.value("num_y", -1);
    const int num_x = doc.value("num_x", -1);
    if (num_y < 1 || num_x < 0) throw ParseError("model file: bad num_y/num_x");
    if (!doc.contains("nodes") || !doc["nodes"].is_array())
        throw ParseError("model file: missing nodes array");

    std::vector<Node> nodes(doc["nodes"].size());
    std::vector<bool> seen(nodes.size(), false);
    for (const auto& rec : doc["nodes"]) {
        if (!rec.contains("id") || !rec["id"].is_number_integer())
            throw ParseError("model file: node record without id");
        const int id = rec["id"].get<int>();
        if (id < 0 || id >= static_cast<int>(nodes.size()) || seen[id])
            throw ParseError("node " + std::to_string(id) + ": id out of range or duplicated");
        seen[id] = true;
        Node n;
        n.id = id;
        const std::string kind = rec.value("kind", "");
        if (kind == "leaf")
            n.kind = NodeKind::Leaf;
        else if (kind == "product")
            n.kind = NodeKind::Product;
        else if (kind == "gating")
            n.kind = NodeKind::Gating;
        else
            throw ParseError("node " + std::to_string(id) + ": unknown kind \"" + kind + "\"");
        if (!rec.contains("scope") || !rec["scope"].is_array())
            throw ParseError("node " + std::to_string(id) + ": missing scope");
        for (const auto& v : rec["scope"]) {
            const int s = v.get<int>();
            if (s < 0 || s >= num_y)
                throw ParseError("node " + std::to_string(id) + ": scope index " +
                                 std::to_string(s) + " out of range");
            n.scope.push_back(s);
        }
        if (rec.contains("children"))
            for (const auto& v : rec["children"]) n.children.push_back(v.get<int>());

        if (n.kind == NodeKind::Gating) {
            if (!rec.contains("gate"))
                throw ParseError("node " + std::to_string(id) + ": gating node without gate");
            const auto& g = rec["gate"];
            const std::string gkind = g.value("kind", "");
            const int k = static_cast<int>(n.children.size());
            std::vector<double> params;
            if (g.contains("params"))
                for (const auto& v : g["params"]) params.push_back(v.get<double>());
            if (gkind == "constant") {
                if (static_cast<int>(params.size()) != k)
                    throw ParseError("node " + std::to_string(id) +
                                     ": constant gate params size mismatch");
                GateConstant c;
                c.weights = Eigen::Map<Eigen::VectorXd>(params.data(), k);
                n.gate = c;
            } else if (gkind == "softmax") {
                if (k == 0 || params.size() % k != 0)
                    throw ParseError("node " + std::to_string(id) +
                                     ": softmax gate params size mismatch");
                const int cols = static_cast<int>(params.size()) / k;
                if (cols != num_x + 1)
                    throw ParseError("node " + std::to_string(id) +
                                     ": softmax gate expects " + std::to_string(num_x + 1) +
                                     " columns");
                GateSoftmax s;
                s.coeffs.resize(k, cols);
                for (int r = 0; r < k; ++r)
                    for (int c = 0; c < cols; ++c) s.coeffs(r, c) = params[r * cols + c];
                n.gate = s;
            } else {
                throw ParseError("node " + std::to_string(id) + ": unknown gate kind \"" + gkind +
                                 "\"");
            }
        }

        if (n.kind == NodeKind::Leaf) {
            if (!rec.contains("leaf"))
                throw ParseError("node " + std::to_string(id) + ": leaf node without leaf record");
            const auto& l = rec["leaf"];
            GlmLeaf leaf;
            try {
                leaf.family = parse_family(l.value("family", ""));
                leaf.link = parse_link(l.value("link", ""));
            } catch (const ParseError& e) {
                throw ParseError("node " + std::to_string(id) + ": " + e.what());
            }
            std::vector<double> coeffs;
            if (l.contains("coeffs"))
                for (const auto& v : l["coeffs"]) coeffs.push_back(v.get<double>());
            int rows = 1;
            if (leaf.family == LeafFamily::Categorical) {
                if (!l.contains("extra") || !l["extra"].contains("categories"))
                    throw ParseError("node " + std::to_string(id) +
                                     ": categorical leaf without categories");
                rows = l["extra"]["categories"].get<int>();
                if (rows < 2)
                    throw ParseError("node " + std::to_string(id) + ": categories must be >= 2");
            }
            if (coeffs.empty() || coeffs.size() % rows != 0 ||
                static_cast<int>(coeffs.size()) / rows != num_x + 1)
                throw ParseError("node " + std::to_string(id) + ": leaf expects " +
                                 std::to_string(rows) + "x" + std::to_string(num_x + 1) +
                                 " coefficients");
            const int cols = static_cast<int>(coeffs.size()) / rows;
            leaf.coeffs.resize(rows, cols);
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) leaf.coeffs(r, c) = coeffs[r * cols + c];
            if (leaf.family == LeafFamily::Gaussian) {
                if (l.contains("extra") && l["extra"].contains("dispersion"))
                    leaf.dispersion = get_real(l["extra"], "dispersion", id);
                if (!(leaf.dispersion > 0))
                    throw ParseError("node " + std::to_string(id) + ": dispersion must be > 0");
            }
            if (!leaf.coeffs.allFinite())
                throw ParseError("node " + std::to_string(id) + ": non-finite coefficients");
            n.leaf = std::move(leaf);
        }
        nodes[id] = std::move(n);
    }
    for (size_t i = 0; i < nodes.size(); ++i)
        if (!seen[i]) throw ParseError("node " + std::to_string(i) + ": missing record");
    if (!doc.contains("root")) throw ParseError("model file: missing root");
    const int root = doc["root"].get<int>();
    Circuit circuit(std::move(nodes), root, num_y, num_x);
    if (circuit.evaluation_order().empty() && circuit.node_count() > 0)
        throw ParseError("node " + std::to_string(root) + ": cycle in child ids");
    return circuit;
}

Circuit load_circuit(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open model file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return circuit_from_json(buf.str());
}

}  // namespace cspn
