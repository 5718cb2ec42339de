#pragma once

namespace rsg {
const char* version_string();
}
