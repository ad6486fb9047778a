// Reference statistics computed with scipy.stats (ttest_1samp and the normal
// survival function); values printed with 17 significant digits.

const T_CASES: &[(&[f64], f64, Op, f64, f64)] = &[
    (&[99.896, 96.113, 94.751, 95.826, 99.858, 98.467, 98.817, 103.679, 96.813, 97.655], 99.919, Op::Ge, -2.117066051520754, 0.03166937320174852),
    (&[67.758, 46.648, 58.623, 44.683, 86.817, 74.046, 46.61, 50.236], 49.351, Op::Le, 1.8488789009405062, 0.05347143820571948),
    (&[72.477, 95.073, 75.245, 61.414, 72.837, 69.224, 57.348], 66.096, Op::Ne, 1.279171253768167, 0.2480772678942224),
    (&[-41.216, -42.019, -42.557, -43.686, -42.547, -40.788, -42.947, -41.763, -44.24, -40.881, -44.858, -43.135, -42.92, -41.796, -42.237, -43.229, -42.381, -41.225, -43.143, -43.27, -41.293, -44.824, -38.589, -43.397], -41.581, Op::Ge, -3.0503299645111093, 0.002838274537827869),
    (&[145.861, 143.497, 147.42, 141.413, 146.436, 150.478, 150.384, 148.118, 147.07, 146.888, 144.644, 150.318, 153.68, 149.481, 143.841, 151.597, 149.19], 148.97, Op::Le, -1.6706285871589783, 0.942881383932885),
    (&[-24.153, -23.758, -24.835, -34.158, -25.823, -13.037, -21.493, -26.067, -25.928, -21.631, -25.512, -20.792, -20.494, -31.814, -28.368, -21.603, -15.36, -33.219, -27.33, -30.842, -32.938, -33.02], -25.774, Op::Ne, 0.18131708883133885, 0.8578573187359186),
    (&[140.637, 136.648, 175.255, 152.104, 146.715, 167.764, 153.001, 147.513, 153.538, 159.077, 166.59, 135.261, 143.988, 123.114, 138.494, 123.533], 145.396, Op::Ge, 0.6177309335342238, 0.726991238059558),
    (&[113.994, 89.701, 95.666, 83.133, 110.588, 85.191, 110.461, 100.569, 112.043, 109.565], 106.167, Op::Le, -1.350725592755588, 0.8951187853056841),
    (&[77.902, 82.368, 90.19, 78.716, 76.6, 73.926, 109.877], 78.31, Op::Ne, 1.2560529769254851, 0.2557899143237272),
    (&[45.38, 18.965, 24.122, 20.258, 26.778, 35.659, 16.31, 4.356, 27.365, 37.068, 20.483, 14.815, 23.174, 11.104, 15.869, 29.577, 8.09, 8.08, 29.277, 15.963], 18.311, Op::Ge, 1.4087093749967754, 0.912461879692154),
];

const Z_CASES: &[(f64, usize, f64, Op, f64, f64)] = &[
    (0.5979, 3062, 0.603, Op::Ge, -0.5767915108027288, 0.2820401524810155),
    (0.6074, 1871, 0.605, Op::Le, 0.21235960082551167, 0.4159132504169477),
    (0.3839, 546, 0.349, Op::Ne, 1.7108760253722524, 0.08710400124779448),
    (0.143, 760, 0.148, Op::Ge, -0.3881737341216517, 0.3489437346603199),
    (0.5707, 1374, 0.555, Op::Le, 1.1710259568768357, 0.12079417188975355),
    (0.1174, 3239, 0.114, Op::Ne, 0.6088567209721866, 0.5426194131425672),
    (0.8014, 2692, 0.813, Op::Ge, -1.543581059545438, 0.0613449281902855),
    (0.7001, 3583, 0.682, Op::Le, 2.3264634377342035, 0.009996920393999069),
    (0.6481, 1449, 0.608, Op::Ne, 3.1266822070031735, 0.0017679091553563532),
    (0.5934, 3262, 0.599, Op::Ge, -0.6525960005162704, 0.25700838232519496),
];
