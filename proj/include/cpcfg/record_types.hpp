#pragma once

#include <map>
#include <string>
#include <vector>

namespace cpcfg {

using Fields = std::map<std::string, std::string>;

// One extracted record: flat header fields plus an ordered list of
// repeated-group items (line-items). Values are whitespace-normalised text.
struct Record {
    Fields header;
    std::vector<Fields> items;

    friend bool operator==(const Record&, const Record&) = default;
};

}  // namespace cpcfg
