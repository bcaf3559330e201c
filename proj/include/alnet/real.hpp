#pragma once

// Element type of every tensor. The default build stores 32-bit floats; a
// build with ALNET_DOUBLE=1 stores 64-bit values and lives in a distinct
// inline namespace so both variants can be linked into one binary.
#if defined(ALNET_DOUBLE) && ALNET_DOUBLE
#define ALNET_NS_BEGIN namespace alnet { inline namespace f64 {
#define ALNET_NS_END } }
#else
#define ALNET_NS_BEGIN namespace alnet { inline namespace f32 {
#define ALNET_NS_END } }
#endif

ALNET_NS_BEGIN

#if defined(ALNET_DOUBLE) && ALNET_DOUBLE
using real = double;
#else
using real = float;
#endif

ALNET_NS_END
