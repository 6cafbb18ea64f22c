/* Triplex sensor mid-value selection, comparison-only variant. */
#include <math.h>

float ia;
float ib;
float ic;
float sel_val;

void MEDSEL_initialize(void)
{
  ia = 0.0F;
  ib = 0.0F;
  ic = 0.0F;
  sel_val = 0.0F;
}

void MEDSEL_step(void)
{
  float lo;
  float hi;
  lo = fminf(ia, ib);
  hi = fmaxf(ia, ib);
  sel_val = fmaxf(lo, fminf(hi, ic));
}
