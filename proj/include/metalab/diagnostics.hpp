#pragma once

#include <functional>
#include <string_view>

namespace metalab {

using WarningSink = std::function<void(std::string_view)>;

// Non-fatal diagnostics (eigenvalue ties, all-degenerate batches, ...).
// The default sink writes to stderr. Thread-safe.
void warn(std::string_view message);

// Replaces the sink and returns the previous one. Pass an empty function to
// silence warnings.
WarningSink set_warning_sink(WarningSink sink);

}  // namespace metalab
