#include "portajob/template.hpp"

#include "portajob/errors.hpp"

#include <memory>

namespace portajob {

namespace {

struct Node {
    enum class Kind { Text, Var, Section, Inverted } kind = Kind::Text;
    std::string value;
    std::vector<Node> children;
};

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string_view::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t");
    return std::string(s.substr(b, e - b + 1));
}

class Parser {
public:
    explicit Parser(std::string_view src) : src_(src) {}

    std::vector<Node> parse() {
        auto nodes = parse_until({});
        return nodes;
    }

private:
    std::vector<Node> parse_until(const std::string& closing) {
        std::vector<Node> out;
        while (pos_ < src_.size()) {
            const auto open = src_.find("{{", pos_);
            if (open == std::string_view::npos) {
                out.push_back({Node::Kind::Text, std::string(src_.substr(pos_)), {}});
                pos_ = src_.size();
                break;
            }
            if (open > pos_) {
                out.push_back({Node::Kind::Text, std::string(src_.substr(pos_, open - pos_)), {}});
            }
            const auto close = src_.find("}}", open + 2);
            if (close == std::string_view::npos) {
                throw TemplateError("unterminated tag at offset " + std::to_string(open));
            }
            const auto tag = src_.substr(open + 2, close - open - 2);
            pos_ = close + 2;
            if (tag.empty()) {
                throw TemplateError("empty tag at offset " + std::to_string(open));
            }
            const char sigil = tag.front();
            if (sigil == '!') {
                continue;
            }
            if (sigil == '/') {
                const auto name = trim(tag.substr(1));
                if (name != closing) {
                    throw TemplateError("unexpected closing tag '" + name + "'");
                }
                return out;
            }
            if (sigil == '#' || sigil == '^') {
                const auto name = trim(tag.substr(1));
                Node n{sigil == '#' ? Node::Kind::Section : Node::Kind::Inverted, name, {}};
                n.children = parse_until(name);
                out.push_back(std::move(n));
                continue;
            }
            out.push_back({Node::Kind::Var, trim(tag), {}});
        }
        if (!closing.empty()) {
            throw TemplateError("section '" + closing + "' is never closed");
        }
        return out;
    }

    std::string_view src_;
    std::size_t pos_ = 0;
};

class Renderer {
public:
    explicit Renderer(const TemplateContext& root) { stack_.push_back(&root); }

    void render(const std::vector<Node>& nodes, std::string& out) {
        for (const auto& n : nodes) {
            switch (n.kind) {
            case Node::Kind::Text: out += n.value; break;
            case Node::Kind::Var: {
                const auto* v = lookup(n.value);
                if (!v || v->is_list) {
                    throw TemplateError("missing template field '" + n.value + "'");
                }
                out += v->text;
                break;
            }
            case Node::Kind::Section: {
                const auto* v = lookup(n.value);
                if (!v) {
                    break;
                }
                if (v->is_list) {
                    for (const auto& item : v->items) {
                        stack_.push_back(&item);
                        render(n.children, out);
                        stack_.pop_back();
                    }
                } else if (!v->text.empty()) {
                    render(n.children, out);
                }
                break;
            }
            case Node::Kind::Inverted: {
                const auto* v = lookup(n.value);
                const bool empty = !v || (v->is_list ? v->items.empty() : v->text.empty());
                if (empty) {
                    render(n.children, out);
                }
                break;
            }
            }
        }
    }

private:
    const TemplateValue* lookup(const std::string& name) const {
        for (auto it = stack_.rbegin(); it != stack_.rend(); ++it) {
            if (auto f = (*it)->find(name); f != (*it)->end()) {
                return &f->second;
            }
        }
        return nullptr;
    }

    std::vector<const TemplateContext*> stack_;
};

} // namespace

std::string render_template(std::string_view tmpl, const TemplateContext& context) {
    const auto nodes = Parser(tmpl).parse();
    std::string out;
    Renderer(context).render(nodes, out);
    return out;
}

} // namespace portajob
