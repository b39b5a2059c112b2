#pragma once

#include "mixsem/data_io.hpp"

namespace mixsem::detail {

// encode_design without the empty-level checks.
EncodedDesign encode_unchecked(const RawDataset& raw, const SchemaConfig& schema,
                               const Centering& fixed);

}  // namespace mixsem::detail
