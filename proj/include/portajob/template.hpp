#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace portajob {

struct TemplateValue;
using TemplateContext = std::map<std::string, TemplateValue>;

struct TemplateValue {
    std::string text;
    std::vector<TemplateContext> items;
    bool is_list = false;

    TemplateValue() = default;
    TemplateValue(std::string s) : text(std::move(s)) {}
    TemplateValue(const char* s) : text(s) {}
    static TemplateValue list(std::vector<TemplateContext> items) {
        TemplateValue v;
        v.items = std::move(items);
        v.is_list = true;
        return v;
    }
};

// Minimal mustache-style renderer. Supported tags:
//   {{name}}            substitution; a missing name is a TemplateError
//   {{#name}}..{{/name}} section: rendered once for a non-empty string,
//                        once per item for a list (item keys shadow outer ones)
//   {{^name}}..{{/name}} inverted section: rendered when name is absent or empty
//   {{! comment}}
// No escaping is applied; callers quote values for their target language.
std::string render_template(std::string_view tmpl, const TemplateContext& context);

} // namespace portajob
